"""Experiment protocols shared by the command line and the acceptance suite.

Timings use a monotonic clock around solver calls only and are reported in
microseconds; instance generation, residual checks and file output are not
timed.  Instances are processed one at a time in id order, so every report is
a deterministic ordered list.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .coreset import CoresetConfig, backtrack_bound, run_coreset
from .io import ReportRow, audit_row, row_from_coreset
from .outliers import OutlierConfig, remove_outliers
from .solvers import SolveOptions, solve
from .synth import SyntheticConfig, generate_instances, true_inlier_mask
from .geometry import norm_label

BOUND_SLACK = 1e-6
REFERENCE_TOL = 1e-9


def _us(seconds: float) -> int:
    return int(round(seconds * 1e6))


def reference_delta(instance, opts: SolveOptions) -> float:
    """Batch optimum by bisection at a tight tolerance (the ratio denominator)."""
    ref = opts.with_(method="bisection", tol_delta=REFERENCE_TOL)
    return float(solve(instance, None, ref).delta)


def ratio_of(gamma: float, delta_star: float) -> float:
    """``gamma / delta_star``; both vanishing counts as a ratio of 1."""
    if delta_star <= 1e-9:
        return 1.0 if gamma <= 1e-9 else math.inf
    return gamma / delta_star


def sample_instances(instances: list, fraction: float, seed: int) -> list:
    """Seeded subsample of ``round(fraction * len)`` instances (at least one), in id order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("sample fraction must lie in (0, 1]")
    if fraction == 1.0:
        return list(instances)
    k = max(1, int(round(fraction * len(instances))))
    keep = np.sort(np.random.default_rng(seed).choice(len(instances), size=k, replace=False))
    return [instances[i] for i in keep]


@dataclass(frozen=True)
class BoundCheck:
    rows: tuple
    violations: int
    result: object
    delta_star: float


def validate_bound(instance, name: str, epsilon: float, seed: int,
                   opts: SolveOptions | None = None) -> BoundCheck:
    """Incumbent ratio at every effective ``t >= 2`` against ``1 + 2/t``, plus the final ratio.

    The last row (no ``t``) compares the returned estimate with ``1 + epsilon``.
    """
    opts = opts or SolveOptions()
    delta_star = reference_delta(instance, opts)
    t0 = time.perf_counter()
    res = run_coreset(instance, CoresetConfig(epsilon=epsilon, solver=opts, rng_seed=seed))
    wall = _us(time.perf_counter() - t0)
    rows = []
    violations = 0
    for e in res.trace:
        if e.t_eff < 2:
            continue
        ratio = ratio_of(e.incumbent_gamma, delta_star)
        bound = backtrack_bound(e.t_eff)
        violations += ratio > bound + BOUND_SLACK
        row = row_from_coreset(name, instance, res, opts, epsilon, t=e.t_eff, ratio=ratio,
                               bound=bound)
        audit_row(row, res)
        rows.append(row)
    ratio = ratio_of(res.gamma, delta_star)
    if epsilon > 0:
        violations += ratio > 1.0 + epsilon + BOUND_SLACK
    final = row_from_coreset(name, instance, res, opts, epsilon, ratio=ratio, wall_us=wall)
    audit_row(final, res)
    rows.append(final)
    return BoundCheck(tuple(rows), int(violations), res, delta_star)


@dataclass(frozen=True)
class BenchCell:
    distribution: str
    N: int
    epsilon: float
    solver: str
    norm: str
    instances: int
    coreset_us: float
    batch_us: float
    speedup: float
    mean_size: float
    max_size: int
    alpha: float
    V: float


BENCH_COLUMNS = ("type", "N", "epsilon", "solver", "norm", "instances", "coreset_us", "batch_us",
                 "speedup", "mean_size", "max_size", "alpha", "V")


def bench(types, views_list, points: int, eps_list, opts: SolveOptions | None = None,
          seed: int = 0, noise: float = 10.0, sample_fraction: float = 1.0) -> list:
    """Mean coreset and batch solve times, coreset sizes and Condition-2 rates per cell.

    The batch solve starts from the same initial estimate as the coreset run
    (the optimum on the seeded first four observations), computed outside
    the timer; the coreset timing includes computing it.
    """
    opts = opts or SolveOptions()
    cells = []
    for dist in types:
        for n in views_list:
            cfg = SyntheticConfig(dist, n_views=int(n), n_points=int(points), noise_sigma=noise,
                                  rng_seed=seed)
            insts = sample_instances(generate_instances(cfg), sample_fraction, seed)
            batch_t = []
            x1 = []
            for k, inst in enumerate(insts):
                perm = np.random.default_rng(seed + k).permutation(inst.n)
                x1.append(solve(inst, perm[:4], opts).x)
                t0 = time.perf_counter()
                solve(inst, None, opts, start=x1[-1])
                batch_t.append(time.perf_counter() - t0)
            for eps in eps_list:
                core_t, sizes, alphas, vs = [], [], [], []
                for k, inst in enumerate(insts):
                    t0 = time.perf_counter()
                    res = run_coreset(inst, CoresetConfig(epsilon=eps, solver=opts, rng_seed=seed + k,
                                                          record_trace=False))
                    core_t.append(time.perf_counter() - t0)
                    sizes.append(res.coreset_size)
                    alphas.append(res.alpha)
                    vs.append(res.V)
                cm = float(np.mean(core_t))
                bm = float(np.mean(batch_t))
                cells.append(BenchCell(dist, int(n), float(eps), opts.method, norm_label(opts.norm_p),
                                       len(insts), cm * 1e6, bm * 1e6, bm / cm if cm > 0 else math.inf,
                                       float(np.mean(sizes)), int(max(sizes)), float(np.mean(alphas)),
                                       float(np.mean(vs))))
    return cells


def bench_table(cells) -> list:
    """Rows (lists of strings) for :data:`BENCH_COLUMNS`."""
    out = []
    for c in cells:
        out.append([c.distribution, str(c.N), repr(c.epsilon), c.solver, c.norm, str(c.instances),
                    "%.1f" % c.coreset_us, "%.1f" % c.batch_us, "%.4f" % c.speedup,
                    "%.3f" % c.mean_size, str(c.max_size), "%.4f" % c.alpha, "%.3f" % c.V])
    return out


def retention(instance, inliers) -> dict:
    """Precision and recall of the surviving indices against the true inlier labels."""
    mask = true_inlier_mask(instance)
    kept = set(int(i) for i in inliers)
    tp = sum(1 for i in kept if mask[i])
    n_true = sum(mask)
    return {"true_inliers_kept": tp,
            "precision": tp / len(kept) if kept else 1.0,
            "recall": tp / n_true if n_true else 1.0}


def compare_outlier_modes(instances, threshold=10.0, epsilon=0.4, seed=0,
                          opts: SolveOptions | None = None) -> dict:
    """Exact and coreset outlier removal over a batch of labelled instances."""
    opts = opts or SolveOptions()
    out = {}
    for mode in ("exact", "coreset"):
        cfg = OutlierConfig(inlier_threshold=threshold, mode=mode, epsilon=epsilon, solver=opts,
                            rng_seed=seed)
        results = [remove_outliers(inst, cfg) for inst in instances]
        out[mode] = {
            "results": results,
            "solver_seconds": sum(r.solver_seconds for r in results),
            "true_inliers_kept": sum(retention(inst, r.inliers)["true_inliers_kept"]
                                     for inst, r in zip(instances, results)),
        }
    return out


__all__ = ["BENCH_COLUMNS", "BenchCell", "BoundCheck", "ReportRow", "bench", "bench_table",
           "compare_outlier_modes", "ratio_of", "reference_delta", "retention", "sample_instances",
           "validate_bound"]
