"""Synthetic discussion corpora whose labels need conversational context.

Each discussion is a root opener, a few parent posts replying to it, and
labelled replies under each parent. A context marker sits ``context_depth``
hops above the labelled reply (depth 2 = the root, depth 1 = the parent),
and a reply marker sits in the reply itself. The label is positive exactly
when the two markers come from the same side, an XOR, so the reply alone
carries no information about its label.

The root and its parents share topic words, so walks guided by sentence
similarity from the parent drift toward the root. Every marker is drawn
independently and uniformly, which keeps the classes balanced.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tree import Discussion, PostNode, serialize_discussions

CONTEXT_MARKERS = (("women", "ladies"), ("cars", "engines"))
REPLY_MARKERS = (("hamsters", "rodents"), ("turbo", "gearbox"))
TOPICS = [
    ["election", "vote", "ballot", "senate"],
    ["football", "league", "goal", "striker"],
    ["recipe", "oven", "flour", "bake"],
    ["climate", "carbon", "emission", "warming"],
    ["movie", "director", "scene", "actor"],
    ["startup", "funding", "investor", "pitch"],
    ["guitar", "chord", "album", "drummer"],
    ["garden", "soil", "seeds", "compost"],
]
FILLER = ("honestly really think maybe just kind of sure know seems point "
          "same thing people always never much quite said well anyway lol "
          "yeah right though still even probably basically literally").split()


@dataclass(frozen=True)
class SyntheticConfig:
    discussions: int = 200
    parents_per_root: int = 2
    replies_per_parent: int = 5
    context_depth: int = 2
    distractor_rate: float = 0.3  # chance a labelled reply gets an unlabelled child
    filler_words: int = 3
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def _words(rng, pool, k):
    return [pool[i] for i in rng.integers(0, len(pool), size=k)]


def generate_synthetic_corpus(cfg: SyntheticConfig) -> list[Discussion]:
    if cfg.context_depth not in (1, 2):
        raise ValueError("context_depth must be 1 or 2")
    rng = np.random.default_rng(cfg.seed)
    out = []
    for di in range(cfg.discussions):
        topic = TOPICS[int(rng.integers(len(TOPICS)))]
        nodes = []
        root_text = _words(rng, topic, 3) + _words(rng, FILLER, cfg.filler_words)
        root_side = int(rng.integers(2))
        if cfg.context_depth == 2:
            root_text.insert(int(rng.integers(len(root_text) + 1)),
                             CONTEXT_MARKERS[root_side][int(rng.integers(2))])
        nodes.append(PostNode("r", None, " ".join(root_text)))
        for pi in range(cfg.parents_per_root):
            pid = f"p{pi}"
            ptext = _words(rng, topic, 3) + _words(rng, FILLER, cfg.filler_words)
            side = root_side
            if cfg.context_depth == 1:
                side = int(rng.integers(2))
                ptext.insert(int(rng.integers(len(ptext) + 1)), CONTEXT_MARKERS[side][int(rng.integers(2))])
            nodes.append(PostNode(pid, "r", " ".join(ptext)))
            for ri in range(cfg.replies_per_parent):
                rid = f"{pid}c{ri}"
                reply_side = int(rng.integers(2))
                rtext = _words(rng, FILLER, cfg.filler_words)
                rtext.insert(int(rng.integers(len(rtext) + 1)), REPLY_MARKERS[reply_side][int(rng.integers(2))])
                label = "pos" if reply_side == side else "neg"
                nodes.append(PostNode(rid, pid, " ".join(rtext), label))
                if rng.random() < cfg.distractor_rate:
                    nodes.append(PostNode(f"{rid}x", rid, " ".join(_words(rng, FILLER, cfg.filler_words + 1))))
        out.append(Discussion.build(f"syn{cfg.seed}-{di:05d}", nodes))
    return out


def synthetic_jsonl(cfg: SyntheticConfig) -> str:
    return serialize_discussions(generate_synthetic_corpus(cfg))
