import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gascom.embeddings import FileProvider, SentenceIndex, token_id  # noqa: E402
from gascom.tree import Discussion, PostNode  # noqa: E402

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def tree(did, shape, texts=None, labels=None):
    """Build a discussion from ``{node: parent}``."""
    texts = texts or {}
    labels = labels or {}
    return Discussion.build(did, [PostNode(n, p, texts.get(n, n), labels.get(n)) for n, p in shape.items()])


# Seven posts: a root with two sub-threads; "h" (the hamster reply) is the target.
THREAD_SHAPE = {"r": None, "a": "r", "b": "r", "c": "a", "h": "c", "h2": "c", "s1": "b"}
THREAD_TEXTS = {
    "r": "women women brains",
    "a": "women tiny brains",
    "b": "cars engine turbo",
    "c": "tiny brains",
    "h": "hamsters",
    "h2": "hamsters tiny",
    "s1": "turbo engine",
}
CLUSTER_A = ("women", "brains", "tiny", "hamsters")
CLUSTER_B = ("cars", "engine", "turbo")


@pytest.fixture
def thread():
    return tree("thread7", THREAD_SHAPE, THREAD_TEXTS, {"h": "pos", "h2": "neg"})


@pytest.fixture
def cluster_embedding_file(tmp_path):
    """d=3 vectors: cluster A near e1, cluster B near e2."""
    rng = np.random.default_rng(5)
    lines = []
    for words, axis in ((CLUSTER_A, 0), (CLUSTER_B, 1)):
        for w in words:
            v = 0.05 * rng.standard_normal(3)
            v[axis] += 1.0
            lines.append(f"{token_id(w)} " + " ".join(repr(float(x)) for x in v))
    path = tmp_path / "clusters.vec"
    path.write_text(f"dim=3 count={len(lines)}\n" + "\n".join(lines) + "\n")
    return path


@pytest.fixture
def cluster_index(cluster_embedding_file):
    return SentenceIndex(FileProvider.load(cluster_embedding_file))
