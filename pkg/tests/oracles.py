"""Independent reference implementations written with plain Python loops."""

import itertools
import math
from fractions import Fraction


def matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def transpose(a):
    return [list(r) for r in zip(*a)]


def softmax_row(row):
    m = max(row)
    e = [math.exp(x - m) for x in row]
    s = sum(e)
    return [x / s for x in e]


def head_matrix(w, j):
    return [list(map(float, r)) for r in w[j]]


def graph_attention(E_p, E_i, wq, wk, wv, wo):
    """Straight-line multi-head attention: per head softmax(QK^T/sqrt(dh))V, concat, @W_O."""
    h = len(wq)
    dh = len(wq[0][0])
    concat = [[] for _ in E_p]
    weights = []
    for j in range(h):
        Q = matmul(E_p, head_matrix(wq, j))
        K = matmul(E_i, head_matrix(wk, j))
        V = matmul(E_i, head_matrix(wv, j))
        logits = [[x / math.sqrt(dh) for x in r] for r in matmul(Q, transpose(K))]
        A = [softmax_row(r) for r in logits]
        weights.append(A)
        H = matmul(A, V)
        for t, r in enumerate(H):
            concat[t].extend(r)
    return matmul(concat, [list(map(float, r)) for r in wo]), weights


def mean_rows(m):
    n = len(m)
    return [sum(r[c] for r in m) / n for c in range(len(m[0]))]


def classify(E_t, E_p, contexts, params, E_w=None):
    """Logits of the whole model for one example, from plain lists."""
    u = mean_rows(E_t)
    feats = list(u)
    if contexts is not None:
        S = []
        for E_i in contexts:
            O, _ = graph_attention(E_p, E_i, params["wq"], params["wk"], params["wv"], params["wo"])
            S.append(mean_rows(O))
        v = mean_rows(S)
        feats += v + [abs(a - b) for a, b in zip(u, v)]
    if E_w is not None:
        feats += mean_rows(E_w)
    W, b = params["cls.w"], params["cls.b"]
    return [sum(feats[i] * W[i][c] for i in range(len(feats))) + b[c] for c in range(2)]


def joint_node_scores(E_p, candidates, wq, wk):
    """Mass of the parent's joint attention on each candidate's tokens."""
    h = len(wq)
    dh = len(wq[0][0])
    keys = [row for c in candidates for row in c]
    owner = [i for i, c in enumerate(candidates) for _ in c]
    scores = [0.0] * len(candidates)
    for j in range(h):
        Q = matmul(E_p, head_matrix(wq, j))
        K = matmul(keys, head_matrix(wk, j))
        for q in Q:
            a = softmax_row([sum(x * y for x, y in zip(q, k)) / math.sqrt(dh) for k in K])
            for w, o in zip(a, owner):
                scores[o] += w
    n = h * len(E_p)
    return [s / n for s in scores]


# -- metrics -------------------------------------------------------------

def confusion(labels, preds):
    c = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for y, p in zip(labels, preds):
        c[("t" if y == p else "f") + ("p" if p == 1 else "n")] += 1
    return c


def average_precision_bruteforce(labels, scores):
    """Mean over thresholds at each distinct score of precision times added recall."""
    n_pos = sum(labels)
    if n_pos == 0:
        return Fraction(0)
    total = Fraction(0)
    prev_tp = 0
    for thr in sorted(set(scores), reverse=True):
        chosen = [y for y, s in zip(labels, scores) if s >= thr]
        tp = sum(chosen)
        total += Fraction(tp - prev_tp, n_pos) * Fraction(tp, len(chosen))
        prev_tp = tp
    return total


def macro_metrics(labels, preds):
    c = confusion(labels, preds)
    per = []
    for hit, pred_n, true_n in ((c["tn"], c["tn"] + c["fn"], c["tn"] + c["fp"]),
                                (c["tp"], c["tp"] + c["fp"], c["tp"] + c["fn"])):
        p = Fraction(hit, pred_n) if pred_n else Fraction(0)
        r = Fraction(hit, true_n) if true_n else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        per.append((p, r, f))
    n = len(labels)
    return {
        "accuracy": Fraction(c["tp"] + c["tn"], n) if n else Fraction(0),
        "precision": (per[0][0] + per[1][0]) / 2,
        "recall": (per[0][1] + per[1][1]) / 2,
        "macro_f1": (per[0][2] + per[1][2]) / 2,
        "confusion": c,
    }


def all_assignments(n):
    return itertools.product((0, 1), repeat=n)


# -- trees ---------------------------------------------------------------

def all_rooted_trees(n):
    """Every parent map on nodes n0..n{n-1} that forms a tree rooted at one node."""
    ids = [f"n{i}" for i in range(n)]
    for root in ids:
        others = [x for x in ids if x != root]
        for choice in itertools.product(ids, repeat=len(others)):
            shape = {root: None}
            shape.update(dict(zip(others, choice)))
            if any(c == p for c, p in zip(others, choice)):
                continue
            ok = True
            for start in others:
                seen, cur = set(), start
                while cur is not None and cur not in seen:
                    seen.add(cur)
                    cur = shape[cur]
                if cur is not None:
                    ok = False
                    break
            if ok:
                yield shape
