"""Context selection over discussion trees.

All walks start at the target's parent (or at the target itself when it is
the root), move between undirected tree neighbours, and record each distinct
node the first time it is reached. The target is never recorded, though a
walk may pass through it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .embeddings import SentenceIndex
from .model import node_attention_scores
from .tree import Discussion, k_hop_neighborhood, neighbors

EPS = 1e-6

# CLI name -> descriptive kind
STRATEGIES = {
    "sim-rw": "similarity-random",
    "sim-greedy": "similarity-greedy",
    "attn-rw": "attention-random",
    "attn-greedy": "attention-greedy",
    "root-rw": "root-seeking-random",
    "parent-child": "parent-child",
    "rand-2hop": "random-2hop",
    "sim-top-2hop": "similarity-top-k-2hop",
}
ATTENTION_STRATEGIES = ("attn-rw", "attn-greedy")
SIMILARITY_STRATEGIES = ("sim-rw", "sim-greedy", "sim-top-2hop")


@dataclass(frozen=True)
class WalkConfig:
    L: int = 6
    start_at_parent: bool = True
    step_budget: int | None = None  # defaults to 10 * L
    p: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("L must be at least 2")
        if self.step_budget is not None and self.step_budget < self.L:
            raise ValueError("step_budget must be >= L")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    @property
    def budget(self) -> int:
        return self.step_budget if self.step_budget is not None else 10 * self.L


@dataclass
class ContextSelection:
    target: str
    strategy: str
    nodes: list[tuple[str, float]] = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [n for n, _ in self.nodes]

    def to_json(self) -> dict:
        return {"target": self.target, "strategy": self.strategy,
                "nodes": [{"id": n, "score": float(s)} for n, s in self.nodes]}


def normalize_scores(raw, eps: float = EPS) -> np.ndarray:
    """Clamp each score to at least ``eps`` and divide by the clamped sum."""
    x = np.maximum(np.asarray(raw, dtype=float), eps)
    if x.size == 0:
        raise ValueError("cannot normalise an empty score list")
    return x / x.sum()


def walk_rng(seed: int, discussion_id: str, target: str, epoch: int = 0) -> np.random.Generator:
    """Private stream per (seed, discussion, target, epoch)."""
    digest = hashlib.blake2b(f"{discussion_id}\x00{target}".encode("utf-8"), digest_size=8).digest()
    words = np.frombuffer(digest, dtype="<u4")
    return np.random.default_rng([seed, epoch, int(words[0]), int(words[1])])


def walk_start(d: Discussion, target: str, cfg: WalkConfig) -> str:
    parent = d.parent(target)
    if cfg.start_at_parent and parent is not None:
        return parent
    return target


def reference_node(d: Discussion, target: str) -> str:
    """Node whose embedding scores candidates: the parent, or a root target itself."""
    parent = d.parent(target)
    return target if parent is None else parent


def _draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(probs) - 1)


def run_walk(d: Discussion, target: str, cfg: WalkConfig, step_probs, rng=None,
             greedy: bool = False, strategy: str = "", steps_out: list | None = None) -> ContextSelection:
    """Generic walk driver.

    ``step_probs(current, candidates)`` returns one probability per candidate
    and must depend on the current node only (it is cached per walk). When
    ``steps_out`` is given, every move is appended to it as (from, to, prob).
    Greedy walks take the first maximum (candidates are id-sorted, so ties go
    to the lowest id) and record a score of 1.0.
    """
    if not greedy and rng is None:
        raise ValueError("random walks need an rng")
    start = walk_start(d, target, cfg)
    sel = ContextSelection(target, strategy)
    seen = set()
    if start != target:
        sel.nodes.append((start, 1.0))
        seen.add(start)
    n_recordable = len(d.nodes) - 1
    cur = start
    steps = 0
    memo: dict[str, tuple[list[str], np.ndarray]] = {}
    while len(sel.nodes) < cfg.L and len(seen) < n_recordable and steps < cfg.budget:
        if cur not in memo:
            cand = neighbors(d, cur)
            memo[cur] = (cand, step_probs(cur, cand) if cand else None)
        cand, probs = memo[cur]
        if not cand:
            break
        i = int(np.argmax(probs)) if greedy else _draw(probs, rng)
        if steps_out is not None:
            steps_out.append((cur, cand[i], float(probs[i])))
        cur = cand[i]
        steps += 1
        if cur != target and cur not in seen:
            seen.add(cur)
            sel.nodes.append((cur, 1.0 if greedy else float(probs[i])))
    return sel


def similarity_walk(d, target, cfg, sim: SentenceIndex, greedy=False, rng=None,
                    steps_out=None) -> ContextSelection:
    ref = reference_node(d, target)

    def probs(_cur, cand):
        return normalize_scores([sim.similarity(d, ref, c) for c in cand])

    return run_walk(d, target, cfg, probs, rng, greedy, "sim-greedy" if greedy else "sim-rw", steps_out)


class AttentionScorer:
    """Scores neighbours by the parent's attention under a frozen trained model."""

    def __init__(self, params, encoder, tokens):
        self.params = params
        self.encoder = encoder
        self.tokens = tokens  # callable (discussion, node_id) -> token ids
        self._emb: dict[tuple[str, str], np.ndarray] = {}

    def embedding(self, d, node_id):
        key = (d.discussion_id, node_id)
        E = self._emb.get(key)
        if E is None:
            E = self._emb[key] = self.encoder.lookup(self.tokens(d, node_id))[0]
        return E

    def scores(self, d, ref, cand) -> np.ndarray:
        return node_attention_scores(self.params, self.embedding(d, ref),
                                     [self.embedding(d, c) for c in cand])


def attention_walk(d, target, cfg, scorer: AttentionScorer, greedy=False, rng=None,
                   steps_out=None) -> ContextSelection:
    if scorer is None:
        raise ValueError("attention-modulated walks need a trained model")
    ref = reference_node(d, target)

    def probs(_cur, cand):
        return normalize_scores(scorer.scores(d, ref, cand))

    return run_walk(d, target, cfg, probs, rng, greedy, "attn-greedy" if greedy else "attn-rw", steps_out)


def root_step_probs(d: Discussion, cur: str, cand: list[str], p: float) -> np.ndarray:
    parent = d.parent(cur)
    kids = [c for c in cand if c != parent]
    if parent is None:
        return np.full(len(cand), 1.0 / len(cand))
    if not kids:
        return np.array([1.0 if c == parent else 0.0 for c in cand])
    return np.array([p if c == parent else (1.0 - p) / len(kids) for c in cand])


def root_seeking_walk(d, target, cfg, rng, steps_out=None) -> ContextSelection:
    return run_walk(d, target, cfg, lambda cur, cand: root_step_probs(d, cur, cand, cfg.p),
                    rng, False, "root-rw", steps_out)


def naive_select(d, target, cfg, strategy: str, sim: SentenceIndex | None = None, rng=None) -> ContextSelection:
    sel = ContextSelection(target, strategy)
    if strategy == "parent-child":
        parent = d.parent(target)
        if parent is not None:
            sel.nodes.append((parent, 1.0))
        return sel
    pool = k_hop_neighborhood(d, target, 2)
    if strategy == "rand-2hop":
        if rng is None:
            raise ValueError("rand-2hop needs an rng")
        k = min(cfg.L, len(pool))
        picks = rng.permutation(len(pool))[:k]
        sel.nodes = [(pool[i], 1.0) for i in picks]
    elif strategy == "sim-top-2hop":
        ranked = sorted(pool, key=lambda n: (-sim.similarity(d, target, n), n))
        sel.nodes = [(n, 1.0) for n in ranked[:cfg.L]]
    else:
        raise ValueError(f"{strategy!r} is not a naive strategy")
    return sel


def select_context(strategy: str, d: Discussion, target: str, cfg: WalkConfig,
                   sim: SentenceIndex | None = None, scorer: AttentionScorer | None = None,
                   epoch: int = 0) -> ContextSelection:
    """Dispatch on the CLI strategy name with the per-target rng stream."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    greedy = strategy.endswith("greedy")
    rng = None if greedy else walk_rng(cfg.seed, d.discussion_id, target, epoch)
    if strategy in ("sim-rw", "sim-greedy"):
        return similarity_walk(d, target, cfg, sim, greedy, rng)
    if strategy in ATTENTION_STRATEGIES:
        return attention_walk(d, target, cfg, scorer, greedy, rng)
    if strategy == "root-rw":
        return root_seeking_walk(d, target, cfg, rng)
    return naive_select(d, target, cfg, strategy, sim, rng)
