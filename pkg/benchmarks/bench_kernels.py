"""Compare the compiled attention kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from gascom import kernels
from gascom.embeddings import ToyProvider
from gascom.model import Encoder, Example, ModelConfig, backward, forward, init_params

SHAPES = [  # (d_model, heads, query tokens, node tokens)
    (64, 5, 8, 10),
    (64, 5, 32, 32),
    (128, 4, 16, 64),
    (16, 2, 4, 4),
]


def kernel_case(d, h, tq, t, seed=0):
    rng = np.random.default_rng(seed)
    p = init_params(seed, ModelConfig(d, h))
    Q = np.ascontiguousarray(np.matmul(rng.standard_normal((tq, d)), p["wq"]))
    E = rng.standard_normal((t, d))
    return Q, E, p


def time_kernel(backend, Q, E, p, repeat):
    def fwd():
        backend.attend_forward(Q, E, p["wk"], p["wv"], p["wo"])

    O, cache = backend.attend_forward(Q, E, p["wk"], p["wv"], p["wo"])
    dO = np.ones_like(O)
    g = [np.zeros_like(p[k]) for k in ("wk", "wv", "wo")]

    def bwd():
        backend.attend_backward(dO, Q, E, p["wk"], p["wv"], p["wo"], cache, *g)

    return (min(timeit.repeat(fwd, number=repeat, repeat=5)) / repeat,
            min(timeit.repeat(bwd, number=repeat, repeat=5)) / repeat)


def time_example(backend, repeat):
    """Full forward + backward for one target with six context nodes."""
    prov = ToyProvider(64, seed=0, trainable=True)
    rng = np.random.default_rng(1)
    vocab = list(range(1, 300))
    p = init_params(0, ModelConfig(64, 5), prov, vocab)
    enc = Encoder(p, prov)
    toks = lambda n: [int(x) for x in rng.choice(vocab, n)]  # noqa: E731
    ex = Example(toks(12), toks(10), [(f"n{i}", toks(12)) for i in range(6)], label=1)

    def step():
        out = forward(p, enc, ex, backend)
        backward(p, out, out.probs - np.array([0.0, 1.0]))

    return min(timeit.repeat(step, number=repeat, repeat=5)) / repeat


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        print("compiled kernels are not built; only the numpy fallback is available", file=sys.stderr)
    names = sorted(kernels.BACKENDS)
    rows = []
    print(f"{'shape (d,h,Tq,T)':<20}" + "".join(f"{n + ' fwd':>14}{n + ' bwd':>14}" for n in names))
    for shape in SHAPES:
        Q, E, p = kernel_case(*shape)
        row = {"shape": shape}
        for n in names:
            row[n] = time_kernel(kernels.BACKENDS[n], Q, E, p, args.repeat)
        rows.append(row)
        print(f"{str(shape):<20}" + "".join(f"{row[n][0] * 1e6:>12.1f}us{row[n][1] * 1e6:>12.1f}us" for n in names))
    example = {n: time_example(kernels.BACKENDS[n], max(args.repeat // 10, 5)) for n in names}
    print("one training example (forward + backward): "
          + ", ".join(f"{n} {t * 1e3:.2f} ms" for n, t in example.items()))
    if "cython" in example:
        print(f"speed-up {example['numpy'] / example['cython']:.2f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"kernels": rows, "example": example}, f, indent=2)


if __name__ == "__main__":
    main()
