"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--m 458407] [--clients 1000] [--grid 100]

Each kernel is checked for agreement first; the numba side is compiled
before timing.  Reports the best of ``--repeat`` runs.
"""

import argparse
import timeit

import numpy as np

from dpauc import _kernels


def make_inputs(m, clients, grid, seed):
    rng = np.random.default_rng(seed)
    scores = np.round(rng.random(m), 4)  # rounding forces ties
    labels = (rng.random(m) < 0.2).astype(np.int8)
    ids = rng.integers(0, clients, m).astype(np.int64)
    thresholds = np.arange(1, grid + 1) / grid
    return scores, labels, ids, thresholds


def cases(scores, labels, ids, clients, thresholds):
    ranks = _kernels.numpy_impl.average_ranks(scores)
    return {
        "average_ranks": lambda impl: impl.average_ranks(scores),
        "grid_confusion": lambda impl: impl.grid_confusion(scores, labels, ids, clients, thresholds),
        "client_rank_stats": lambda impl: impl.client_rank_stats(ranks, labels, ids, clients),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.allclose(x, y) for x, y in zip(a, b))
    return np.allclose(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=458_407)
    ap.add_argument("--clients", type=int, default=1000)
    ap.add_argument("--grid", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if _kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")

    scores, labels, ids, thresholds = make_inputs(args.m, args.clients, args.grid, args.seed)
    print(f"M={args.m} clients={args.clients} grid={args.grid} best of {args.repeat}")
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in cases(scores, labels, ids, args.clients, thresholds).items():
        if not _same(fn(_kernels.numpy_impl), fn(_kernels.numba_impl)):
            raise SystemExit(f"{name}: backends disagree")
        t_np = min(timeit.repeat(lambda: fn(_kernels.numpy_impl), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fn(_kernels.numba_impl), number=1, repeat=args.repeat))
        print(f"{name:<20}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
