"""Time the numpy and numba kernel backends on training-sized inputs.

Usage:  python3 benchmarks/bench_kernels.py [--repeat 50] [--train]

Prints one line per kernel and shape with the best-of-``repeat`` time for
each backend and the speedup. ``--train`` also times 300 training
iterations end to end under each ``DDRF_USE_NUMBA`` setting (in
subprocesses, since the flag is read at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ddrf import kernels

TRAIN_SNIPPET = """
import time
from ddrf import TrainConfig, synth_inhomogeneous, train, kernels
ds = synth_inhomogeneous(2000, seed=0)
cfg = TrainConfig(max_iterations=300, n_batches=50, lr=1.0)
train(ds.features[:200], ds.targets[:200], TrainConfig(max_iterations=60, n_batches=50))
t = time.perf_counter()
train(ds.features, ds.targets, cfg)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def cases(rng):
    for n, depth in ((16, 6), (800, 6), (800, 10)):
        n_split, n_leaves = 2 ** (depth - 1) - 1, 2 ** (depth - 1)
        s = rng.uniform(size=(n, n_split))
        v = rng.normal(size=(n, n_leaves))
        nodes = kernels.numpy_backend.subtree_sums(v)
        y, mu, var = rng.normal(size=n), rng.normal(size=n_leaves), rng.uniform(0.5, 2, n_leaves)
        tag = f"N={n:<4d} depth={depth:<2d}"
        yield tag, "path_products", (s, n_leaves)
        yield tag, "subtree_sums", (v,)
        yield tag, "split_node_grad", (s, nodes)
        yield tag, "tempered_posterior", (v * 10, 0.5)
        yield tag, "gaussian_logpdf", (y, mu, var)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--train", action="store_true", help="also time end-to-end training")
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    npb, nbb = kernels.get_backend("numpy"), kernels.get_backend("numba")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20s} {'shape':<18s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for tag, name, call_args in cases(rng):
        f_np, f_nb = getattr(npb, name), getattr(nbb, name)
        np.testing.assert_allclose(f_np(*call_args), f_nb(*call_args), rtol=1e-10, atol=1e-13)
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<20s} {tag:<18s} {t_np * 1e6:9.1f}us {t_nb * 1e6:9.1f}us {t_np / t_nb:7.2f}x")
    if args.train:
        for flag in ("0", "1"):
            env = {**os.environ, "DDRF_USE_NUMBA": flag}
            out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env,
                                 capture_output=True, text=True, check=True).stdout.split()
            print(f"train 300 iterations  backend={out[0]:<6s} {float(out[1]):.2f}s")


if __name__ == "__main__":
    main()
