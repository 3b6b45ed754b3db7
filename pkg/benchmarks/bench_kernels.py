"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--n 20000] [--J 50] [--B 200] [--repeat 3]
"""

import argparse
import time

import numpy as np

from dtadjust import _accel
from dtadjust.drfit import SolverOptions
from dtadjust.kernels import fit_logit_batch, weighted_sums


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--J", type=int, default=50)
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--B", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(args.n), rng.normal(size=(args.n, args.d - 1))])
    y = X[:, 1:].sum(axis=1) + rng.normal(size=args.n)
    cuts = np.quantile(y, np.linspace(0.02, 0.98, args.J))
    Zt = (y[None, :] <= cuts[:, None]).astype(np.float64)
    S = rng.exponential(size=(args.B, args.n))
    D = rng.normal(size=(args.n, args.J))
    opts = SolverOptions()

    def logit():
        return fit_logit_batch(X, Zt, tol=opts.tol, max_iter=opts.max_iter,
                               max_halving=opts.max_halving, ridge=opts.ridge,
                               cond_max=opts.cond_max)

    rows = []
    for name, fn in (("fit_logit_batch", logit), ("weighted_sums", lambda: weighted_sums(S, D))):
        results = {}
        for backend in ("numpy", "numba"):
            with _accel.backend_as(backend):
                fn()  # warm-up (JIT compilation)
                results[backend] = _time(fn, args.repeat)
        a = results["numpy"][1]
        b = results["numba"][1]
        a, b = (a[0], b[0]) if isinstance(a, tuple) else (a, b)
        gap = float(np.max(np.abs(a - b)))
        rows.append((name, results["numpy"][0], results["numba"][0], gap))

    print(f"n={args.n} J={args.J} d={args.d} B={args.B} threads={_accel.max_threads()}")
    print(f"{'kernel':<18}{'numpy s':>10}{'numba s':>10}{'speedup':>9}{'max diff':>11}")
    for name, tn, tb, gap in rows:
        print(f"{name:<18}{tn:>10.4f}{tb:>10.4f}{tn / tb:>9.2f}{gap:>11.1e}")


if __name__ == "__main__":
    main()
