"""Time the compiled brickwork kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py --N 32 64 128 --sweeps 200

Both kernels consume the same random block, so the script also reports the
largest entrywise difference between the two results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from qssep.kernels import COMPILED_AVAILABLE, get_kernel
from qssep.qssep_mc import BrickworkParams, diagonal_matrix


def _time(kernel, G0, rnd, params, repeats):
    best, G = float("inf"), None
    for _ in range(repeats):
        G = G0.copy()
        t0 = time.perf_counter()
        kernel.sweeps(G, rnd, params.a, params.delta, False, True, 0.0, 1.0,
                      np.exp(-params.a), np.exp(-0.5 * params.a), np.exp(-params.a), np.exp(-0.5 * params.a))
        best = min(best, time.perf_counter() - t0)
    return best, G


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--dt", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not COMPILED_AVAILABLE:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
        return 1
    params = BrickworkParams.from_dt(args.dt)
    rng = np.random.default_rng(args.seed)
    print(f"{'N':>5} {'python us/sweep':>16} {'compiled us/sweep':>18} {'speedup':>8} {'max diff':>10}")
    for N in args.N:
        G0 = diagonal_matrix({"kind": "linear", "a": 0.1, "b": 0.8}, N, "open").astype(complex)
        rnd = rng.random((args.sweeps, 2, N - 1))
        t_py, G_py = _time(get_kernel("python"), G0, rnd, params, args.repeats)
        t_c, G_c = _time(get_kernel("compiled"), G0, rnd, params, args.repeats)
        us = 1e6 / args.sweeps
        print(f"{N:5d} {t_py * us:16.1f} {t_c * us:18.1f} {t_py / t_c:8.1f} {np.max(np.abs(G_py - G_c)):10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
