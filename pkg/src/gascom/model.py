"""Token-level multi-head graph attention network with a softmax classifier.

The parent post supplies the attention queries; every selected context node
(the parent included) supplies keys and values. Per-node outputs are mean
pooled into sentence vectors and averaged into the context vector ``v``,
which is combined with the target vector ``u`` (and, in polarity mode, the
target+parent vector ``w``) before the affine classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .embeddings import SEP_ID, EmbeddingProvider, mean_pool


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    heads: int = 5
    use_context: bool = True
    use_cross: bool = False  # polarity mode: add the target+parent vector w

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def d_feat(self) -> int:
        blocks = 3 if self.use_context else 1
        return (blocks + int(self.use_cross)) * self.d_model

    def check(self) -> None:
        if self.d_model < 1 or self.heads < 1:
            raise ValueError("d_model and heads must be positive")
        if self.d_head < 1:
            raise ValueError(f"d_model={self.d_model} too small for {self.heads} heads")


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    vocab: np.ndarray | None = None  # token ids of the rows of tensors["emb.table"]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()},
                           None if self.vocab is None else self.vocab.copy())

    @property
    def trainable_embeddings(self) -> bool:
        return "emb.table" in self.tensors


def _glorot(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def init_params(seed: int, config: ModelConfig, provider: EmbeddingProvider | None = None,
                vocab=None) -> ModelParams:
    """Scaled-uniform initialisation, deterministic per seed.

    With a trainable provider and a ``vocab``, the provider's rows for those
    token ids become the trainable ``emb.table`` tensor.
    """
    config.check()
    d, h, dh = config.d_model, config.heads, config.d_head
    rng = np.random.default_rng(seed)
    t = {
        "wq": _glorot(rng, (h, d, dh), d, dh),
        "wk": _glorot(rng, (h, d, dh), d, dh),
        "wv": _glorot(rng, (h, d, dh), d, dh),
        "wo": _glorot(rng, (h * dh, d), h * dh, d),
        "cls.w": _glorot(rng, (config.d_feat, 2), config.d_feat, 2),
        "cls.b": np.zeros(2),
    }
    ids = None
    if provider is not None and provider.trainable and vocab is not None:
        ids = np.array(sorted(set(int(x) for x in vocab)), dtype=np.int64)
        t["emb.table"] = (np.stack([provider.vector(int(i)) for i in ids]) if len(ids)
                          else np.zeros((0, d)))
    return ModelParams(config, t, ids)


class Encoder:
    """Looks up token embeddings from the trainable table or the provider."""

    def __init__(self, params: ModelParams, provider: EmbeddingProvider):
        if provider.dim != params.config.d_model:
            raise ValueError(f"provider dim {provider.dim} != model d_model {params.config.d_model}")
        self.params = params
        self.provider = provider
        self.index = {} if params.vocab is None else {int(t): i for i, t in enumerate(params.vocab)}

    def lookup(self, tokens) -> tuple[np.ndarray, np.ndarray | None]:
        """Return (E, rows); ``rows[k]`` is the table row of token k or -1."""
        d = self.params.config.d_model
        if len(tokens) == 0:
            return np.zeros((0, d)), np.zeros(0, dtype=np.int64)
        if not self.index:
            return self.provider.embed_tokens(tokens), None
        rows = np.array([self.index.get(t, -1) for t in tokens], dtype=np.int64)
        table = self.params.tensors["emb.table"]
        if (rows >= 0).all():
            return table[rows], rows
        E = np.stack([table[r] if r >= 0 else self.provider.vector(t) for t, r in zip(tokens, rows)])
        return E, rows


def cross_tokens(target_tokens, parent_tokens, t_max: int) -> list[int]:
    """``target [SEP] parent`` truncated to ``t_max``; empty when both are empty."""
    if not target_tokens and not parent_tokens:
        return []
    return (list(target_tokens) + [SEP_ID] + list(parent_tokens))[:t_max]


def cross_attention_embedding(provider: EmbeddingProvider, target_text: str, parent_text: str):
    """Mean-pooled embedding of ``target [SEP] parent``."""
    toks = cross_tokens(provider.tokenize(target_text), provider.tokenize(parent_text), provider.t_max)
    return mean_pool(provider.embed_tokens(toks))


def scaled_dot_attention(Q, K, V):
    """Single-head attention; returns (output, weights)."""
    Q, K, V = (np.asarray(x, dtype=float) for x in (Q, K, V))
    if K.shape[0] == 0:
        raise ValueError("attention over zero keys")
    if Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0]:
        raise ValueError("shape mismatch in attention inputs")
    W = kernels.softmax_rows(Q @ K.T / np.sqrt(K.shape[1]))
    return W @ V, W


def _queries(params: ModelParams, E_q):
    return np.ascontiguousarray(np.matmul(E_q, params["wq"]))


def multi_head_graph_attention(params: ModelParams, E_parent, E_i, backend=None):
    """Return (O_i, weights) with weights shaped (heads, T_parent, T_i)."""
    E_parent = np.ascontiguousarray(E_parent, dtype=float)
    E_i = np.ascontiguousarray(E_i, dtype=float)
    if E_parent.shape[0] == 0 or E_i.shape[0] == 0:
        raise ValueError("attention needs non-empty parent and context token sequences")
    k = backend or kernels.active
    O, cache = k.attend_forward(_queries(params, E_parent), E_i, params["wk"], params["wv"], params["wo"])
    return O, cache[2]


def aggregate_context(params: ModelParams, E_parent, context, backend=None):
    """Node-level mean of the pooled attention outputs.

    Returns ``(v, S, trace)``; empty context nodes are skipped and excluded
    from the mean.
    """
    S, trace = [], []
    for E_i in context:
        if len(E_i) == 0:
            trace.append(None)
            continue
        O, A = multi_head_graph_attention(params, E_parent, E_i, backend)
        S.append(O.mean(axis=0))
        trace.append(A)
    if not S:
        raise ValueError("no non-empty context node to aggregate")
    return np.mean(S, axis=0), S, trace


def build_features(u, v=None, w=None):
    u = np.asarray(u, dtype=float)
    parts = [u]
    if v is not None:
        v = np.asarray(v, dtype=float)
        if v.shape != u.shape:
            raise ValueError(f"u and v differ in shape: {u.shape} vs {v.shape}")
        parts += [v, np.abs(u - v)]
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape != u.shape:
            raise ValueError(f"w has shape {w.shape}, expected {u.shape}")
        parts.append(w)
    return np.concatenate(parts)


def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class Example:
    """Token ids for one target post and its selected context."""

    target: list[int]
    query: list[int]  # the parent, or the target itself for a root
    context: list[tuple[str, list[int]]]
    cross: list[int] | None = None
    label: int | None = None
    key: tuple[str, str] = ("", "")


@dataclass
class ForwardOutput:
    logits: np.ndarray
    probs: np.ndarray
    u: np.ndarray
    v: np.ndarray | None
    w: np.ndarray | None
    S: list[np.ndarray]
    trace: dict[str, np.ndarray]
    features: np.ndarray
    state: dict = field(default_factory=dict, repr=False)


def forward(params: ModelParams, enc: Encoder, ex: Example, backend=None) -> ForwardOutput:
    cfg = params.config
    k = backend or kernels.active
    E_t, rows_t = enc.lookup(ex.target)
    u = mean_pool(E_t)
    st: dict = {"rows_t": rows_t, "nt": len(ex.target), "backend": k}
    v = w = None
    S, trace = [], {}
    if cfg.use_context:
        v = np.zeros(cfg.d_model)
        E_q, rows_q = enc.lookup(ex.query)
        st["rows_q"], st["E_q"] = rows_q, E_q
        nodes = []
        if len(E_q):
            Q = _queries(params, E_q)
            st["Q"] = Q
            for nid, toks in ex.context:
                if not toks:
                    continue
                E_i, rows_i = enc.lookup(toks)
                E_i = np.ascontiguousarray(E_i)
                O, cache = k.attend_forward(Q, E_i, params["wk"], params["wv"], params["wo"])
                S.append(O.mean(axis=0))
                trace[nid] = cache[2]
                nodes.append((E_i, rows_i, cache))
        if S:
            v = np.mean(S, axis=0)
        elif len(ex.target) == 0:
            raise ValueError(f"target {ex.key} has no tokens and no usable context")
        st["nodes"] = nodes
    if cfg.use_cross:
        E_w, rows_w = enc.lookup(ex.cross or [])
        w = mean_pool(E_w)
        st["rows_w"], st["nw"] = rows_w, len(E_w)
    x = build_features(u, v, w)
    z = x @ params["cls.w"] + params["cls.b"]
    return ForwardOutput(z, softmax(z), u, v, w, S, trace, x, st)


def backward(params: ModelParams, out: ForwardOutput, dz) -> dict[str, np.ndarray]:
    """Exact gradients of the loss w.r.t. every tensor, given dLoss/dlogits."""
    cfg = params.config
    d = cfg.d_model
    st = out.state
    k = st["backend"]
    dz = np.asarray(dz, dtype=float)
    g = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    g["cls.w"] = np.outer(out.features, dz)
    g["cls.b"] = dz.copy()
    dx = params["cls.w"] @ dz
    du = dx[:d].copy()
    off = d
    table_g = g.get("emb.table")

    def scatter(rows, dE):
        if table_g is not None and rows is not None and len(rows):
            mask = rows >= 0
            np.add.at(table_g, rows[mask], dE[mask])

    if cfg.use_context:
        sgn = np.sign(out.u - out.v)  # subgradient 0 at the kink
        dabs = dx[2 * d:3 * d]
        du += sgn * dabs
        dv = dx[d:2 * d] - sgn * dabs
        off = 3 * d
        nodes = st["nodes"]
        if nodes:
            Q, E_q = st["Q"], st["E_q"]
            dQ = np.zeros_like(Q)
            dO = np.repeat((dv / (len(nodes) * Q.shape[1]))[None, :], Q.shape[1], axis=0)
            for E_i, rows_i, cache in nodes:
                dQ_i, dE_i = k.attend_backward(dO, Q, E_i, params["wk"], params["wv"], params["wo"],
                                               cache, g["wk"], g["wv"], g["wo"])
                dQ += dQ_i
                scatter(rows_i, dE_i)
            g["wq"] += np.matmul(E_q.T, dQ)
            scatter(st["rows_q"], np.matmul(dQ, params["wq"].transpose(0, 2, 1)).sum(axis=0))
    if cfg.use_cross and st["nw"]:
        dw = dx[off:off + d]
        scatter(st["rows_w"], np.broadcast_to(dw / st["nw"], (st["nw"], d)))
    if st["nt"]:
        scatter(st["rows_t"], np.broadcast_to(du / st["nt"], (st["nt"], d)))
    return g


def node_attention_scores(params: ModelParams, E_parent, candidates) -> np.ndarray:
    """Share of the parent's attention each candidate receives.

    Parent queries attend jointly over the tokens of all candidates; a
    candidate's score is the attention mass on its tokens, averaged over
    heads and query tokens. Scores sum to 1 unless every candidate (or the
    parent) is empty, in which case all are 0.
    """
    weights = token_attention_weights(params, E_parent, candidates)
    return np.array([float(w.sum()) for w in weights])


def token_attention_weights(params: ModelParams, E_parent, candidates) -> list[np.ndarray]:
    """Per-token joint attention weights, averaged over heads and queries."""
    sizes = [len(c) for c in candidates]
    if len(E_parent) == 0 or sum(sizes) == 0:
        return [np.zeros(n) for n in sizes]
    Q = _queries(params, np.asarray(E_parent, dtype=float))
    E = np.concatenate([np.asarray(c, dtype=float).reshape(-1, params.config.d_model) for c in candidates])
    K = np.matmul(E, params["wk"])
    A = kernels.softmax_rows(np.matmul(Q, K.transpose(0, 2, 1)) / np.sqrt(Q.shape[2]))
    flat = A.mean(axis=(0, 1))
    return np.split(flat, np.cumsum(sizes)[:-1])


def parameter_count(params: ModelParams) -> int:
    return int(sum(t.size for t in params.tensors.values()))
