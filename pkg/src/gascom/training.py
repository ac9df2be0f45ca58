"""Training loop, self-distillation and evaluation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .embeddings import SEP_ID, EmbeddingProvider, FileProvider, SentenceIndex, ToyProvider
from .metrics import MetricsReport, metrics_from_probs
from .model import (Encoder, Example, ModelConfig, ModelParams, backward, cross_tokens, forward,
                    init_params)
from .tree import Discussion
from .walks import ATTENTION_STRATEGIES, STRATEGIES, AttentionScorer, WalkConfig, select_context

log = logging.getLogger(__name__)

EVAL_EPOCH = 1_000_000  # rng stream tag for evaluation-time walks
TASKS = ("hate", "polarity")


@dataclass(frozen=True)
class TrainConfig:
    task: str = "hate"
    strategy: str = "sim-rw"
    context: bool = True  # False drops v: u-only features
    L: int = 6
    p: float = 0.75
    start_at_parent: bool = True
    batch_size: int = 8
    learning_rate: float = 1e-3
    warmup_fraction: float = 0.10
    epochs: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    d_model: int = 64
    heads: int = 5
    t_max: int = 128
    embeddings: str = "toy"
    sim_embeddings: str = "toy"
    sim_seed: int = 1
    train_fraction: float = 0.80
    split_unit: str = "instance"
    phase1_strategy: str = "sim-rw"
    jobs: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.split_unit not in ("instance", "discussion"):
            raise ValueError("split_unit must be 'instance' or 'discussion'")

    @property
    def walk(self) -> WalkConfig:
        return WalkConfig(L=self.L, start_at_parent=self.start_at_parent, p=self.p, seed=self.seed)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.d_model, self.heads, self.context, self.task == "polarity")

    def to_json(self) -> dict:
        """Settings that affect results; ``jobs`` is left out so outputs do not depend on it."""
        out = asdict(self)
        del out["jobs"]
        return out


def make_provider(source: str, dim: int, seed: int, trainable: bool, t_max: int) -> EmbeddingProvider:
    if source == "toy":
        return ToyProvider(dim, seed=seed, trainable=trainable, t_max=t_max)
    p = FileProvider.load(source, t_max=t_max)
    if p.dim != dim:
        raise ValueError(f"{source}: embedding dim {p.dim} does not match d_model={dim}")
    return p


class Runtime:
    """Corpus plus the two embedding providers and per-node token cache."""

    def __init__(self, corpus: list[Discussion], cfg: TrainConfig):
        self.cfg = cfg
        self.discussions = {d.discussion_id: d for d in corpus}
        if len(self.discussions) != len(corpus):
            raise ValueError("duplicate discussion ids in corpus")
        self.provider = make_provider(cfg.embeddings, cfg.d_model, cfg.seed, True, cfg.t_max)
        self.sim = SentenceIndex(make_provider(cfg.sim_embeddings, cfg.d_model, cfg.sim_seed, False, cfg.t_max))
        self._tokens: dict[tuple[str, str], list[int]] = {}

    def tokens(self, d: Discussion, node_id: str) -> list[int]:
        key = (d.discussion_id, node_id)
        toks = self._tokens.get(key)
        if toks is None:
            toks = self._tokens[key] = self.provider.tokenize(d.nodes[node_id].text)
        return toks

    def vocab(self) -> list[int]:
        ids = {SEP_ID}
        for d in self.discussions.values():
            for nid in d.nodes:
                ids.update(self.tokens(d, nid))
        return sorted(ids)

    def instances(self) -> list[tuple[str, str]]:
        return [(did, nid) for did in sorted(self.discussions) for nid in self.discussions[did].labeled()]

    def example(self, key, strategy: str, mcfg: ModelConfig, walk: WalkConfig,
                scorer: AttentionScorer | None = None, epoch: int = 0) -> Example:
        did, nid = key
        d = self.discussions[did]
        parent = d.parent(nid)
        target_toks = self.tokens(d, nid)
        context, query = [], []
        if mcfg.use_context:
            sel = select_context(strategy, d, nid, walk, self.sim, scorer, epoch)
            context = [(c, self.tokens(d, c)) for c in sel.ids]
            query = self.tokens(d, parent if parent is not None else nid)
        cross = None
        if mcfg.use_cross:
            cross = cross_tokens(target_toks, self.tokens(d, parent) if parent else [], self.cfg.t_max)
        return Example(target_toks, query, context, cross, d.nodes[nid].label_index, key)


def split_instances(rt: Runtime, cfg: TrainConfig) -> tuple[list, list]:
    keys = rt.instances()
    rng = np.random.default_rng([cfg.seed, 7])
    if cfg.split_unit == "discussion":
        dids = sorted(rt.discussions)
        order = [dids[i] for i in rng.permutation(len(dids))]
        n_train = round(len(dids) * cfg.train_fraction)
        train_d = set(order[:n_train])
        return [k for k in keys if k[0] in train_d], [k for k in keys if k[0] not in train_d]
    order = [keys[i] for i in rng.permutation(len(keys))]
    n_train = round(len(keys) * cfg.train_fraction)
    return sorted(order[:n_train]), sorted(order[n_train:])


def cross_entropy(probs, label: int) -> tuple[float, np.ndarray]:
    """Loss -log p[label] (clamped at 1e-12) and its gradient w.r.t. logits."""
    probs = np.asarray(probs, dtype=float)
    loss = -math.log(max(probs[label], 1e-12))
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, grad


def warmup_lr(base: float, step: int, total_steps: int, warmup_fraction: float) -> float:
    """Linear warm-up over the first ``warmup_fraction`` of steps (1-indexed)."""
    warm = warmup_fraction * total_steps
    if warm <= 0:
        return base
    return base * min(1.0, step / warm)


class Adam:
    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0
        self.rejected = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> bool:
        """Apply one bias-corrected update in place; refuse non-finite gradients."""
        if not all(np.isfinite(g).all() for g in grads.values()):
            self.rejected += 1
            log.warning("non-finite gradient; step %d rejected", self.t + 1)
            return False
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in params.tensors.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)
    train_keys: list = field(default_factory=list)
    test_keys: list = field(default_factory=list)
    scorer_params: ModelParams | None = None


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def predict(params: ModelParams, rt: Runtime, keys, strategy: str, walk: WalkConfig,
            scorer: AttentionScorer | None = None, jobs: int = 1) -> np.ndarray:
    enc = Encoder(params, rt.provider)

    def one(key):
        ex = rt.example(key, strategy, params.config, walk, scorer, EVAL_EPOCH)
        return forward(params, enc, ex).probs

    out = _map(one, keys, jobs)
    return np.array(out).reshape(-1, 2)


def evaluate(params: ModelParams, rt: Runtime, keys, cfg: TrainConfig,
             scorer: AttentionScorer | None = None) -> tuple[MetricsReport, np.ndarray]:
    probs = predict(params, rt, keys, cfg.strategy, cfg.walk, scorer, cfg.jobs)
    labels = [rt.discussions[d].nodes[n].label_index for d, n in keys]
    return metrics_from_probs(labels, probs), probs


def make_scorer(params: ModelParams, rt: Runtime) -> AttentionScorer:
    frozen = params.copy()
    return AttentionScorer(frozen, Encoder(frozen, rt.provider), rt.tokens)


def train(corpus, cfg: TrainConfig, strategy: str | None = None, rt: Runtime | None = None,
          init: ModelParams | None = None, scorer: AttentionScorer | None = None,
          epochs: int | None = None) -> TrainResult:
    """Mini-batch Adam on cross-entropy; walks are redrawn every epoch."""
    rt = rt or Runtime(corpus, cfg)
    strategy = strategy or cfg.strategy
    if strategy in ATTENTION_STRATEGIES and scorer is None and cfg.context:
        raise ValueError(f"{strategy} needs a trained scorer; use train_self_distilled")
    epochs = cfg.epochs if epochs is None else epochs
    train_keys, test_keys = split_instances(rt, cfg)
    if not train_keys:
        raise ValueError("no labelled training instances")
    params = init.copy() if init is not None else init_params(cfg.seed, cfg.model, rt.provider, rt.vocab())
    enc = Encoder(params, rt.provider)
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    walk = cfg.walk
    n_batches = math.ceil(len(train_keys) / cfg.batch_size)
    total = epochs * n_batches
    step = 0
    history = []

    def grad_of(item):
        key, epoch = item
        ex = rt.example(key, strategy, params.config, walk, scorer, epoch)
        out = forward(params, enc, ex)
        loss, dz = cross_entropy(out.probs, ex.label)
        return loss, backward(params, out, dz)

    for epoch in range(epochs):
        order = np.random.default_rng([cfg.seed, 11, epoch]).permutation(len(train_keys))
        losses = []
        for b in range(n_batches):
            batch = [(train_keys[i], epoch) for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            results = _map(grad_of, batch, cfg.jobs)
            total_g = {k: np.zeros_like(v) for k, v in params.tensors.items()}
            for loss, g in results:
                losses.append(loss)
                for k, v in g.items():
                    total_g[k] += v
            for v in total_g.values():
                v /= len(batch)
            step += 1
            opt.step(params, total_g, warmup_lr(cfg.learning_rate, step, total, cfg.warmup_fraction))
        entry = {"epoch": epoch + 1, "strategy": strategy, "train_loss": float(np.mean(losses)),
                 "steps": step, "rejected_steps": opt.rejected}
        if test_keys:
            report, _ = evaluate(params, rt, test_keys, replace(cfg, strategy=strategy), scorer)
            entry["eval"] = report.to_json()
        log.info("epoch %d loss %.4f", epoch + 1, entry["train_loss"])
        history.append(entry)
    return TrainResult(params, history, train_keys, test_keys)


def train_self_distilled(corpus, cfg: TrainConfig, rt: Runtime | None = None) -> TrainResult:
    """Phase 1 trains with ``phase1_strategy``; phase 2 continues from those
    weights with a fresh optimizer, walking by the frozen phase-1 attention."""
    rt = rt or Runtime(corpus, cfg)
    phase2 = cfg.strategy if cfg.strategy in ATTENTION_STRATEGIES else "attn-rw"
    first = train(corpus, cfg, cfg.phase1_strategy, rt)
    scorer = make_scorer(first.params, rt)
    second = train(corpus, cfg, phase2, rt, init=first.params, scorer=scorer)
    for e in first.log:
        e["phase"] = 1
    for e in second.log:
        e["phase"] = 2
    second.log = first.log + second.log
    second.scorer_params = scorer.params
    return second
