"""Discussion trees: parsing, validation and neighbourhood queries."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

LABELS = ("neg", "pos")


class CorpusError(ValueError):
    """Raised when a corpus record cannot be turned into a valid discussion."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PostNode:
    id: str
    parent: str | None
    text: str
    label: str | None = None

    @property
    def label_index(self) -> int | None:
        """1 for the positive class (support / hate), 0 for negative."""
        if self.label is None:
            return None
        return LABELS.index(self.label)


@dataclass(frozen=True)
class Discussion:
    discussion_id: str
    nodes: dict[str, PostNode]
    root: str
    _children: dict[str, tuple[str, ...]] = field(repr=False, compare=False, default_factory=dict)

    @classmethod
    def build(cls, discussion_id: str, nodes: Iterable[PostNode]) -> "Discussion":
        """Build and validate a discussion; nodes may come in any order."""
        by_id: dict[str, PostNode] = {}
        for n in nodes:
            if not n.id:
                raise CorpusError(f"empty node id in discussion {discussion_id!r}")
            if n.id in by_id:
                raise CorpusError(f"duplicate node id {n.id!r} in discussion {discussion_id!r}")
            by_id[n.id] = n
        roots = sorted(n.id for n in by_id.values() if n.parent is None)
        d = cls(discussion_id, by_id, roots[0] if roots else "", _build_children(by_id))
        problems = validate_tree(d)
        if problems:
            raise CorpusError(f"discussion {discussion_id!r}: " + "; ".join(problems))
        return d

    def __len__(self) -> int:
        return len(self.nodes)

    def parent(self, n: str) -> str | None:
        return self._node(n).parent

    def children(self, n: str) -> tuple[str, ...]:
        self._node(n)
        return self._children.get(n, ())

    def labeled(self) -> list[str]:
        return sorted(i for i, n in self.nodes.items() if n.label is not None)

    def edges(self) -> list[tuple[str, str]]:
        """(child, parent) pairs in ascending child id order."""
        return [(i, n.parent) for i, n in sorted(self.nodes.items()) if n.parent is not None]

    def _node(self, n: str) -> PostNode:
        try:
            return self.nodes[n]
        except KeyError:
            raise KeyError(f"unknown node id {n!r} in discussion {self.discussion_id!r}") from None

    def to_record(self) -> dict:
        return {
            "discussion_id": self.discussion_id,
            "nodes": [
                {"id": n.id, "parent_id": n.parent, "text": n.text, "label": n.label}
                for _, n in sorted(self.nodes.items())
            ],
        }


def _build_children(nodes: dict[str, PostNode]) -> dict[str, tuple[str, ...]]:
    kids: dict[str, list[str]] = {}
    for n in nodes.values():
        if n.parent is not None:
            kids.setdefault(n.parent, []).append(n.id)
    return {k: tuple(sorted(v)) for k, v in kids.items()}


def validate_tree(d: Discussion) -> list[str]:
    """Return a list of violated invariants; empty when `d` is a valid tree."""
    problems = []
    nodes = d.nodes
    if not nodes:
        return ["discussion has no nodes"]
    roots = sorted(i for i, n in nodes.items() if n.parent is None)
    if not roots:
        problems.append("no root (every node has a parent)")
    elif len(roots) > 1:
        problems.append("multiple roots: " + ", ".join(roots))
    for i, n in sorted(nodes.items()):
        if n.parent is not None and n.parent not in nodes:
            problems.append(f"dangling parent: node {i!r} has parent {n.parent!r} which does not exist")
        if n.label is not None and n.label not in LABELS:
            problems.append(f"node {i!r} has unknown label {n.label!r}")
    # Walk up from every node; any walk that revisits a node is on a cycle.
    on_cycle: set[str] = set()
    for start in sorted(nodes):
        seen = []
        cur: str | None = start
        while cur is not None and cur in nodes and cur not in seen:
            seen.append(cur)
            cur = nodes[cur].parent
        if cur is not None and cur in nodes:
            on_cycle.update(seen[seen.index(cur):])
    if on_cycle:
        problems.append("cycle through nodes: " + ", ".join(sorted(on_cycle)))
    return problems


def neighbors(d: Discussion, n: str) -> list[str]:
    """Parent (if any) plus children of `n`, ascending by id."""
    node = d._node(n)
    out = list(d.children(n))
    if node.parent is not None:
        out.append(node.parent)
    return sorted(out)


def k_hop_neighborhood(d: Discussion, n: str, k: int) -> list[str]:
    """All nodes at undirected tree distance 1..k from `n`, ascending by id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    d._node(n)
    dist = {n: 0}
    queue = deque([n])
    while queue:
        cur = queue.popleft()
        if dist[cur] == k:
            continue
        for m in neighbors(d, cur):
            if m not in dist:
                dist[m] = dist[cur] + 1
                queue.append(m)
    return sorted(m for m in dist if m != n)


def _parse_record(obj: object, line: int) -> Discussion:
    if not isinstance(obj, dict) or "discussion_id" not in obj or not isinstance(obj.get("nodes"), list):
        raise CorpusError("record must be an object with 'discussion_id' and a 'nodes' list", line)
    nodes = []
    for raw in obj["nodes"]:
        if not isinstance(raw, dict) or not isinstance(raw.get("id"), str):
            raise CorpusError("each node needs a string 'id'", line)
        parent = raw.get("parent_id")
        text = raw.get("text", "")
        label = raw.get("label")
        if parent is not None and not isinstance(parent, str):
            raise CorpusError(f"node {raw['id']!r}: parent_id must be a string or null", line)
        if not isinstance(text, str):
            raise CorpusError(f"node {raw['id']!r}: text must be a string", line)
        if label is not None and label not in LABELS:
            raise CorpusError(f"node {raw['id']!r}: label must be 'pos', 'neg' or null", line)
        nodes.append(PostNode(raw["id"], parent, text, label))
    try:
        return Discussion.build(str(obj["discussion_id"]), nodes)
    except CorpusError as e:
        raise CorpusError(str(e), line) from None


def iter_discussions(stream: IO) -> Iterator[Discussion]:
    """Yield discussions from a JSON-lines stream (bytes or text)."""
    for lineno, raw in enumerate(stream, 1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise CorpusError(f"malformed JSON ({e.msg})", lineno) from None
        yield _parse_record(obj, lineno)


def parse_discussions(stream: IO) -> list[Discussion]:
    return list(iter_discussions(stream))


def load_corpus(path) -> list[Discussion]:
    with open(path, "rb") as f:
        return parse_discussions(f)


def serialize_discussions(discussions: Iterable[Discussion]) -> str:
    return "".join(
        json.dumps(d.to_record(), ensure_ascii=False, sort_keys=True) + "\n" for d in discussions
    )
