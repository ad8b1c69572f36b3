"""Compare the compiled and numpy residual/Jacobian kernels.

Usage: ``python benchmarks/bench_kernel.py [--repeat N] [--scenario NAME]``.
Prints the per-call time of each backend on the kernel alone and the wall
clock of a short full-model run.
"""

import argparse
import time

import numpy as np

from qsshybrid import kernel
from qsshybrid.dae import IntegratorConfig, simulate_full
from qsshybrid.model import build_model
from qsshybrid.scenario import load_bundled


def time_kernel(model, state, repeat):
    U = model.partition.gather(state)
    best = np.inf
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            model.evaluate(U, state)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def time_run(case, schedule, t_end):
    t0 = time.perf_counter()
    simulate_full(case, schedule, IntegratorConfig(t_end=t_end))
    return time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=500)
    ap.add_argument("--scenario", default="case1")
    ap.add_argument("--t-end", type=float, default=20.0)
    args = ap.parse_args(argv)
    case, schedule = load_bundled(args.scenario)
    model, state = build_model(case)
    prev = kernel.backend()
    rows = []
    try:
        for name in kernel.available_backends():
            kernel.use_backend(name)
            rows.append((name, time_kernel(model, state, args.repeat),
                         time_run(case, schedule, args.t_end)))
    finally:
        kernel.use_backend(prev)
    print(f"scenario {args.scenario}: {model.partition.n} unknowns")
    print(f"{'backend':<10}{'kernel [us]':>14}{'run [s]':>10}")
    for name, tk, tr in rows:
        print(f"{name:<10}{tk * 1e6:>14.1f}{tr:>10.2f}")
    if len(rows) == 2:
        print(f"kernel speed-up {rows[1][1] / rows[0][1]:.1f}x, run speed-up {rows[1][2] / rows[0][2]:.2f}x")


if __name__ == "__main__":
    main()
