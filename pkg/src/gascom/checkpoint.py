"""Checkpoint archive: a JSON header line followed by raw float64 tensors.

Layout::

    GASCOM-CKPT 1\\n
    <header JSON>\\n
    <tensor bytes, little-endian float64, C order, in header order>

The header holds ``{"meta": {...}, "tensors": [{"name", "shape"}...],
"vocab": [...] | null}``. Per-head projections are stored as ``wq.0``,
``wq.1``, ... so each head is addressable on its own. The bytes depend only
on content, so identical runs give identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .model import ModelConfig, ModelParams

MAGIC = b"GASCOM-CKPT 1\n"
_PER_HEAD = ("wq", "wk", "wv")


def _named(params: ModelParams):
    for name in ("wq", "wk", "wv"):
        for j, t in enumerate(params[name]):
            yield f"{name}.{j}", t
    for name in ("wo", "cls.w", "cls.b", "emb.table"):
        if name in params.tensors:
            yield name, params[name]


def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    cfg = params.config
    entries = list(_named(params))
    header = {
        "meta": {"model": {"d_model": cfg.d_model, "heads": cfg.heads, "d_head": cfg.d_head,
                           "use_context": cfg.use_context, "use_cross": cfg.use_cross,
                           "d_feat": cfg.d_feat},
                 **(meta or {})},
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in entries],
        "vocab": None if params.vocab is None else [int(x) for x in params.vocab],
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, t in entries:
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with open(path, "rb") as f:
        if f.readline() != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(f.readline())
        raw = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated tensor {entry['name']}")
            raw[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(float).reshape(shape)
    m = header["meta"]["model"]
    cfg = ModelConfig(m["d_model"], m["heads"], m["use_context"], m["use_cross"])
    tensors = {name: np.ascontiguousarray(np.stack([raw[f"{name}.{j}"] for j in range(cfg.heads)]))
               for name in _PER_HEAD}
    for name in ("wo", "cls.w", "cls.b", "emb.table"):
        if name in raw:
            tensors[name] = np.ascontiguousarray(raw[name])
    if tensors["cls.w"].shape != (cfg.d_feat, 2):
        raise ValueError(f"{path}: classifier shape {tensors['cls.w'].shape} does not match d_feat={cfg.d_feat}")
    vocab = header.get("vocab")
    params = ModelParams(cfg, tensors, None if vocab is None else np.array(vocab, dtype=np.int64))
    return params, header["meta"]
