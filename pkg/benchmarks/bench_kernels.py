"""Time the proper-time kernel table with the numba loop and the numpy fallback.

    python3 benchmarks/bench_kernels.py --points 20000 --repeat 3

Also checks that both backends agree to 1e-12 relative.
"""
import argparse
import time

import numpy as np

from elliptic_laplacian._accel import HAVE_NUMBA
from elliptic_laplacian._kernels import proper_time_moments


def bench(backend, args_, repeat, jac):
    proper_time_moments(*[a[:10] for a in args_[:3]], *args_[3:], jac=jac, backend=backend)  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = proper_time_moments(*args_, jac=jac, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--nodes", type=int, default=192)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--mu", type=float, default=0.5)
    a = ap.parse_args()
    rng = np.random.default_rng(0)
    x = rng.uniform(-3, 3, a.points)
    y = rng.uniform(-3, 3, a.points)
    w = rng.uniform(0.01, 2.0, a.points)
    args_ = (x, y, w, a.mu, 1.0 - a.mu, a.nodes)
    print(f"points={a.points} nodes={a.nodes} mu={a.mu}")
    for jac in (False, True):
        t_np, ref = bench("numpy", args_, a.repeat, jac)
        line = f"jac={jac!s:5} numpy {t_np * 1e3:9.1f} ms"
        if HAVE_NUMBA:
            t_nb, out = bench("numba", args_, a.repeat, jac)
            err = float(np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-300)))
            line += f"   numba {t_nb * 1e3:9.1f} ms   speedup {t_np / t_nb:5.1f}x   max rel diff {err:.1e}"
        else:
            line += "   numba unavailable (or disabled by ELLIPTIC_LAPLACIAN_NO_NUMBA)"
        print(line)


if __name__ == "__main__":
    main()
