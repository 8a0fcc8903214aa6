"""Time the compiled XXZ matvec against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--sizes 3 4 5 6] [--block 1 4] [--repeat 5]

Prints one row per (spins, block width) with the best-of-``repeat`` time per
product for each backend and the speedup.
"""
import argparse
import timeit

import numpy as np

from ethrelax import _kernels_py
from ethrelax.model import ModelSpec, build_model

try:
    from ethrelax import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def bench(n_left, k, repeat):
    op = build_model(ModelSpec("ladder", n_left)).H
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.standard_normal((op.dim, k)) + 1j * rng.standard_normal((op.dim, k)))
    out = np.empty_like(x)
    row = {"spins": op.n_sites, "dim": op.dim, "k": k}
    for name, mod in (("numpy", _kernels_py), ("cython", _compiled)):
        if mod is None:
            row[name] = float("nan")
            continue
        f = lambda: mod.apply_xxz(op.diag, op.masks, op.amps, x, out)  # noqa: E731
        number = max(1, int(2e6 // (op.dim * k)))
        row[name] = min(timeit.repeat(f, number=number, repeat=repeat)) / number
    row["speedup"] = row["numpy"] / row["cython"]
    return row


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[3, 4, 5, 6], help="N_L values (ladder, N_R = 2 N_L)")
    p.add_argument("--block", type=int, nargs="+", default=[1, 4])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    print(f"{'spins':>5} {'dim':>8} {'k':>3} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8}")
    for nl in args.sizes:
        for k in args.block:
            r = bench(nl, k, args.repeat)
            print(f"{r['spins']:>5} {r['dim']:>8} {r['k']:>3} {1e3 * r['numpy']:>11.3f} "
                  f"{1e3 * r['cython']:>12.3f} {r['speedup']:>8.1f}")


if __name__ == "__main__":
    main()
