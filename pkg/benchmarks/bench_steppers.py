"""Benchmark the compiled stepping core against the NumPy fallback.

Runs the closed-form one-step kernel over a grid of (steps, paths) workloads
for each drift kind and reports throughput in path-steps per second.

Usage: python3 benchmarks/bench_steppers.py [--quick]
"""

import argparse
import time

import numpy as np

from kinetic_em._steppers import _numpy

try:
    from kinetic_em._steppers import _core
except ImportError:
    _core = None

KINDS = {
    "zero": (0, np.zeros(0)),
    "constant": (1, np.array([0.7])),
    "linear_friction": (2, np.array([1.0])),
    "sign_velocity": (3, np.array([2.0])),
}


def workload(steps: int, paths: int, d: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    h = 1.0 / steps
    dw = rng.normal(scale=h**0.5, size=(steps, paths, d))
    di = rng.normal(scale=h**1.5, size=(steps, paths, d))
    x = rng.normal(size=(paths, d))
    v = rng.normal(size=(paths, d))
    return h, dw, di, x, v


def run(stepper, kind, params, h, dw, di, x, v, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        xs, vs = x.copy(), v.copy()
        t0 = time.perf_counter()
        stepper(dw, di, xs, vs, h, kind, params)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    args = ap.parse_args()

    shapes = [(256, 256, 1), (1024, 512, 1), (4096, 1024, 1), (1024, 512, 3)]
    if args.quick:
        shapes = [(256, 128, 1), (1024, 256, 1)]

    if _core is None:
        print("compiled backend unavailable; benchmarking the NumPy fallback only")
    header = f"{'kind':16s} {'steps':>6s} {'paths':>6s} {'d':>2s} " \
             f"{'numpy Mps':>10s} {'compiled Mps':>13s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for kind_name, (kind, params) in KINDS.items():
        for steps, paths, d in shapes:
            h, dw, di, x, v = workload(steps, paths, d)
            t_np = run(_numpy.step_closed_form, kind, params, h, dw, di, x, v)
            mps_np = steps * paths * d / t_np / 1e6
            if _core is not None:
                t_c = run(_core.step_closed_form, kind, params, h, dw, di, x, v)
                mps_c = steps * paths * d / t_c / 1e6
                print(f"{kind_name:16s} {steps:6d} {paths:6d} {d:2d} "
                      f"{mps_np:10.1f} {mps_c:13.1f} {t_np / t_c:7.2f}x")
            else:
                print(f"{kind_name:16s} {steps:6d} {paths:6d} {d:2d} "
                      f"{mps_np:10.1f} {'-':>13s} {'-':>8s}")


if __name__ == "__main__":
    main()
