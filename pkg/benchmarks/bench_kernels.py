"""Time the compiled transport kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 50 100 200] [--repeat 3]
"""

import argparse
import time

import numpy as np

from regrade import _accel, _kernels_py


def instance(n, seed=0):
    rng = np.random.default_rng(seed)
    P, Q = rng.uniform(0, 20, (n, 2)), rng.uniform(0, 20, (n, 2))
    D = np.hypot(P[:, None, 0] - Q[None, :, 0], P[:, None, 1] - Q[None, :, 1])
    return D, rng.uniform(0.01, 0.1, n), rng.uniform(0.01, 0.1, n)


def best_of(fn, args, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _accel.BACKEND != "compiled":
        print("compiled extension not importable; only the fallback is timed")
    print(f"{'n x n':>10}{'compiled (s)':>15}{'python (s)':>14}{'speedup':>10}{'|dobj|':>12}")
    for n in args.sizes:
        D, vy, vx = instance(n)
        eps = 1e-13
        tp, (fp, _) = best_of(_kernels_py.ssp_transport, (D, vy, vx, eps), args.repeat)
        if _accel.BACKEND == "compiled":
            tc, (fc, _) = best_of(_accel.ssp_transport, (D, vy, vx, eps), args.repeat)
            gap = abs(float((fc * D).sum()) - float((fp * D).sum()))
            print(f"{n:>10}{tc:>15.4f}{tp:>14.4f}{tp / tc:>9.1f}x{gap:>12.1e}")
        else:
            print(f"{n:>10}{'-':>15}{tp:>14.4f}{'-':>10}{'-':>12}")


if __name__ == "__main__":
    main()
