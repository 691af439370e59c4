"""Time the compiled coalition kernels against the pure-numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 5] [--M 140] [--P 200]

Both backends are loaded side by side; their outputs are checked for
equality before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from rlfx.explain import _coalition_py

try:
    from rlfx.explain import _coalition as _compiled
except ImportError:  # extension not built
    _compiled = None


def make_inputs(M: int, P: int, B: int, seed: int = 0):
    r = np.random.default_rng(seed)
    x = r.standard_normal(M)
    bg = r.standard_normal((B, M))
    perms = np.stack([r.permutation(M) for _ in range(P)]).astype(np.int64)
    idx = r.integers(0, B, P).astype(np.int64)
    preds = r.standard_normal(P * (M + 1))
    return x, bg, perms, idx, preds


def bench(impl, args, repeats: int) -> dict[str, float]:
    x, bg, perms, idx, preds = args
    t_batch = min(timeit.repeat(lambda: impl.coalition_batch(x, bg, perms, idx), number=1, repeat=repeats))
    t_scatter = min(timeit.repeat(lambda: impl.scatter_marginals(preds, perms), number=1, repeat=repeats))
    return {"coalition_batch": t_batch, "scatter_marginals": t_scatter}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, nargs="+", default=[6, 36, 140], help="features per instance (C*T)")
    ap.add_argument("--P", type=int, default=200, help="permutations per call")
    ap.add_argument("--B", type=int, default=50, help="background size")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not available; only the fallback can run")
    print(f"{'M':>5} {'kernel':<18} {'python [ms]':>12} {'compiled [ms]':>14} {'speed-up':>9}")
    for M in args.M:
        inputs = make_inputs(M, args.P, args.B)
        py = bench(_coalition_py, inputs, args.repeats)
        if _compiled is not None:
            x, bg, perms, idx, preds = inputs
            assert np.array_equal(_compiled.coalition_batch(x, bg, perms, idx), _coalition_py.coalition_batch(x, bg, perms, idx))
            assert np.array_equal(_compiled.scatter_marginals(preds, perms), _coalition_py.scatter_marginals(preds, perms))
            cy = bench(_compiled, inputs, args.repeats)
        for name, t in py.items():
            if _compiled is None:
                print(f"{M:>5} {name:<18} {t * 1e3:>12.3f} {'-':>14} {'-':>9}")
            else:
                print(f"{M:>5} {name:<18} {t * 1e3:>12.3f} {cy[name] * 1e3:>14.3f} {t / cy[name]:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
