"""Binary classification metrics (positive class = index 1)."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)

METRIC_ORDER = ("accuracy", "macro_f1", "precision", "recall", "pr_auc")


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    precision: float
    recall: float
    pr_auc: float
    confusion: dict[str, int]
    n: int
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [f"{name:<10} {getattr(self, name):.4f}" for name in METRIC_ORDER]
        c = self.confusion
        rows.append(f"{'confusion':<10} tp={c['tp']} fp={c['fp']} tn={c['tn']} fn={c['fn']}")
        return "\n".join(rows)


def _ratio(num: float, den: float, what: str, warnings: list[str]) -> float:
    if den == 0:
        warnings.append(f"{what}: zero denominator, defined as 0")
        return 0.0
    return num / den


def average_precision(labels, scores) -> float:
    """Step-function area under the positive-class precision-recall curve.

    Scores that tie form one threshold; precision is taken at the end of each
    tied block and weighted by the recall it adds.
    """
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-s, kind="stable")
    y, s = y[order], s[order]
    tp = np.cumsum(y)
    last = np.r_[s[1:] != s[:-1], True]
    tp_at, seen_at = tp[last], np.flatnonzero(last) + 1
    gained = np.diff(np.r_[0, tp_at])
    return float(np.sum(gained * (tp_at / seen_at)) / n_pos)


def compute_metrics(labels, preds, pos_scores) -> MetricsReport:
    y = np.asarray(labels, dtype=int)
    p = np.asarray(preds, dtype=int)
    warnings: list[str] = []
    n = len(y)
    tp = int(((p == 1) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    prec, rec, f1 = [], [], []
    for cls, (hit, pred_n, true_n) in enumerate([(tn, tn + fn, tn + fp), (tp, tp + fp, tp + fn)]):
        pc = _ratio(hit, pred_n, f"precision[{cls}]", warnings)
        rc = _ratio(hit, true_n, f"recall[{cls}]", warnings)
        prec.append(pc)
        rec.append(rc)
        f1.append(0.0 if pc + rc == 0 else 2 * pc * rc / (pc + rc))
    if tp + fn == 0:
        warnings.append("pr_auc: no positive examples, defined as 0")
    accuracy = _ratio(tp + tn, n, "accuracy", warnings)
    for w in warnings:
        log.warning(w)
    return MetricsReport(
        accuracy=accuracy,
        macro_f1=float(np.mean(f1)),
        precision=float(np.mean(prec)),
        recall=float(np.mean(rec)),
        pr_auc=average_precision(y, pos_scores) if n else 0.0,
        confusion={"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        n=n,
        warnings=warnings,
    )


def metrics_from_probs(labels, probs) -> MetricsReport:
    """Predictions are the argmax class; a 0.5/0.5 tie predicts negative."""
    probs = np.asarray(probs, dtype=float).reshape(-1, 2)
    return compute_metrics(labels, np.argmax(probs, axis=1), probs[:, 1])
