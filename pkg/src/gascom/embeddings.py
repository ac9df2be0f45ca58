"""Tokenization, embedding providers and sentence-level similarity."""

from __future__ import annotations

import logging
import re
import zlib

import numpy as np

log = logging.getLogger(__name__)

VOCAB_SIZE = 2**16
SEP_ID = 0  # reserved; hashed tokens land in 1..VOCAB_SIZE-1
DEFAULT_T_MAX = 128
DEFAULT_DIM = 64

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def token_id(token: str) -> int:
    return 1 + zlib.crc32(token.encode("utf-8")) % (VOCAB_SIZE - 1)


def words(text: str, t_max: int = DEFAULT_T_MAX) -> list[str]:
    return _TOKEN_RE.findall(text.lower())[:t_max]


def tokenize(text: str, t_max: int = DEFAULT_T_MAX) -> list[int]:
    """Lowercased word/punctuation split hashed into the fixed vocabulary.

    Truncation keeps the first `t_max` tokens.
    """
    return [token_id(t) for t in words(text, t_max)]


class EmbeddingProvider:
    """Maps token ids to rows of a `dim`-wide embedding table."""

    dim: int
    deterministic = True
    trainable = False
    t_max = DEFAULT_T_MAX

    def vector(self, tid: int) -> np.ndarray:
        raise NotImplementedError

    def embed_tokens(self, seq) -> np.ndarray:
        if len(seq) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(t) for t in seq])

    def tokenize(self, text: str) -> list[int]:
        return tokenize(text, self.t_max)


class ToyProvider(EmbeddingProvider):
    """Seeded random table; each row is drawn from its own (seed, token) stream.

    Rows are generated on first use, so the 2^16 table never exists in full.
    ``trainable=True`` lets a model copy rows into its own trainable table.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0, trainable: bool = False,
                 t_max: int = DEFAULT_T_MAX, scale: float = 1.0):
        self.dim = dim
        self.seed = seed
        self.trainable = trainable
        self.t_max = t_max
        self.scale = scale
        self._rows: dict[int, np.ndarray] = {}

    def initial_vector(self, tid: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, tid])
        return rng.standard_normal(self.dim) * (self.scale / np.sqrt(self.dim))

    def vector(self, tid: int) -> np.ndarray:
        if not 0 <= tid < VOCAB_SIZE:
            raise KeyError(f"token id {tid} outside vocabulary")
        row = self._rows.get(tid)
        if row is None:
            row = self._rows[tid] = self.initial_vector(tid)
        return row


class FileProvider(EmbeddingProvider):
    """Exact vectors read from an embedding file.

    Format: a header line ``dim=<d> count=<n>`` followed by ``n`` lines of
    ``<token-id> <d floats>``.
    """

    def __init__(self, table: dict[int, np.ndarray], dim: int, t_max: int = DEFAULT_T_MAX):
        self.table = table
        self.dim = dim
        self.t_max = t_max

    @classmethod
    def load(cls, path, t_max: int = DEFAULT_T_MAX) -> "FileProvider":
        dim, rows = read_vector_file(path)
        return cls({int(k): v for k, v in rows.items()}, dim, t_max)

    def vector(self, tid: int) -> np.ndarray:
        try:
            return self.table[tid]
        except KeyError:
            raise KeyError(f"token id {tid} not in embedding file") from None


def read_vector_file(path) -> tuple[int, dict[str, np.ndarray]]:
    """Read the ``dim=<d> count=<n>`` layout; keys are kept as strings."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        try:
            meta = dict(kv.split("=", 1) for kv in header)
            dim, count = int(meta["dim"]), int(meta["count"])
        except (ValueError, KeyError):
            raise ValueError(f"{path}: bad header, expected 'dim=<d> count=<n>'") from None
        rows = {}
        for lineno, line in enumerate(f, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            rows[parts[0]] = np.array([float(x) for x in parts[1:]])
    if len(rows) != count:
        raise ValueError(f"{path}: header says {count} rows, found {len(rows)}")
    return dim, rows


def write_vector_file(path, rows: dict, dim: int) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"dim={dim} count={len(rows)}\n")
        for key, vec in rows.items():
            f.write(f"{key} " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_sentence_cache(path) -> dict[str, np.ndarray]:
    """Precomputed sentence vectors keyed by node id (same layout as token files)."""
    return read_vector_file(path)[1]


def mean_pool(m: np.ndarray) -> np.ndarray:
    """Row mean; an empty matrix pools to the zero vector."""
    if m.shape[0] == 0:
        log.debug("mean_pool of empty matrix; returning zero vector")
        return np.zeros(m.shape[1])
    return m.mean(axis=0)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        log.debug("cosine similarity with a zero vector; scoring 0")
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def sentence_embedding(provider: EmbeddingProvider, text: str) -> np.ndarray:
    return mean_pool(provider.embed_tokens(provider.tokenize(text)))


class SentenceIndex:
    """Per-discussion cache of sentence vectors for the similarity walks."""

    def __init__(self, provider: EmbeddingProvider | None = None,
                 cache: dict[str, np.ndarray] | None = None):
        if provider is None and cache is None:
            raise ValueError("need a provider or a sentence cache")
        self.provider = provider
        self.cache = cache
        self._memo: dict[tuple[str, str], np.ndarray] = {}

    def get(self, discussion, node_id: str) -> np.ndarray:
        key = (discussion.discussion_id, node_id)
        vec = self._memo.get(key)
        if vec is None:
            if self.cache is not None and node_id in self.cache:
                vec = self.cache[node_id]
            else:
                if self.provider is None:
                    raise KeyError(f"node {node_id!r} missing from sentence cache")
                vec = sentence_embedding(self.provider, discussion.nodes[node_id].text)
            self._memo[key] = vec
        return vec

    def similarity(self, discussion, a: str, b: str) -> float:
        return cosine_similarity(self.get(discussion, a), self.get(discussion, b))
