"""Compiled vs pure-Python kernel timings on synthetic Type-B instances.

Usage: python3 benchmarks/bench_kernels.py [--views 100] [--points 10] [--repeat 3]
"""

import argparse
import math
import time

import numpy as np

from linftri import CoresetConfig, SolveOptions, SyntheticConfig, generate_instances, run_coreset, solve
from linftri.inner import available_backends


def _best_of(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--views", type=int, default=100)
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled kernel not built; only the python backend is available")
    insts = generate_instances(SyntheticConfig("B", n_views=args.views, n_points=args.points,
                                               noise_sigma=10.0, rng_seed=args.seed))
    print(f"{'task':<22}{'norm':>6}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for p in (2, 1, math.inf):
        tasks = {
            "batch dinkelbach": lambda inst, o: solve(inst, None, o).delta,
            "batch bisection": lambda inst, o: solve(inst, None, o.with_(method="bisection")).delta,
            "coreset eps=0.01": lambda inst, o: run_coreset(inst, CoresetConfig(0.01, o)).gamma,
        }
        for name, task in tasks.items():
            times = {}
            vals = {}
            for be in backends:
                opts = SolveOptions(norm_p=p, backend=be)
                t, v = _best_of(lambda: [task(inst, opts) for inst in insts], args.repeat)
                times[be] = t / len(insts) * 1e3
                vals[be] = np.array(v)
            line = f"{name:<22}{str(p):>6}" + "".join(f"{times[b]:>14.3f}" for b in backends)
            if len(backends) == 2:
                line += f"{times['python'] / times['compiled']:>10.1f}"
                diff = np.max(np.abs(vals["python"] - vals["compiled"]) / (1 + vals["compiled"]))
                if diff > 1e-6:
                    line += f"  (results differ by {diff:.2e})"
            print(line)


if __name__ == "__main__":
    main()
