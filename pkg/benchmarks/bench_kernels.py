"""Compare the numba kernels with their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--paths 200] [--steps 4096] [--repeat 3]

Each kernel is run once to trigger compilation, then timed ``--repeat``
times; the best time is reported together with the max abs difference
between the two implementations.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from singdrift import _kernels
from singdrift.fbm import TimeGrid, sample_fbm_array


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--steps", type=int, default=4096)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _kernels.HAS_NUMBA:
        print("numba unavailable or disabled; only the numpy timings are meaningful")

    tg = TimeGrid(args.steps)
    w = sample_fbm_array(0.3, tg, args.paths, 1, seed=0)[:, :, 0]
    w2 = sample_fbm_array(0.3, tg, args.paths, 2, seed=0)
    x0 = np.zeros(args.paths)
    axis = np.linspace(-4, 4, 1025)
    vals = np.exp(-axis**2 / 0.02) / np.sqrt(0.02 * np.pi)
    t_idx = np.array([args.steps // 4, args.steps // 2, args.steps])
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, -0.2]])

    cases = {
        "euler_grid_1d": (
            lambda: _kernels._euler_grid_1d_nb(x0, w, tg.dt, -4.0, axis[1] - axis[0], vals)[0],
            lambda: _kernels._euler_grid_1d_np(x0, w, tg.dt, -4.0, axis[1] - axis[0], vals)[0],
        ),
        "occupation_1d": (
            lambda: _kernels._occupation_1d_nb(w, tg.dt, -1.0, 0.0625, 33, 0.05, t_idx),
            lambda: _kernels._occupation_1d_np(w, tg.dt, -1.0, 0.0625, 33, 0.05, t_idx),
        ),
        "occupation_ball": (
            lambda: _kernels._occupation_ball_nb(w2, tg.dt, pts, 0.1, t_idx),
            lambda: _kernels._occupation_ball_np(w2, tg.dt, pts, 0.1, t_idx),
        ),
        "ce_euler": (
            lambda: _kernels._ce_euler_nb(w2, tg.dt, 1.0, 2.0**-20),
            lambda: _kernels._ce_euler_np(w2, tg.dt, 1.0, 2.0**-20),
        ),
    }
    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, (nb, npy) in cases.items():
        t_nb, a = best_of(nb, args.repeat)
        t_np, b = best_of(npy, args.repeat)
        diff = float(np.max(np.abs(a - b)))
        print(f"{name:<18}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
