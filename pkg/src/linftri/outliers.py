"""Recursive outlier removal by repeated min-max fits.

Each round fits the remaining observations; if some residual still exceeds the
inlier threshold, observations are discarded and the fit is repeated.  The
exact mode drops the support set of a batch solve.  The coreset mode fits with
a loose coreset run and drops the (up to) four largest residuals above the
threshold.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .coreset import CoresetConfig, full_residuals, run_coreset
from .errors import Exhausted
from .geometry import TriangulationInstance
from .solvers import Solution, SolveOptions, solve

MODES = ("exact", "coreset")
TOP_K = 4


@dataclass(frozen=True)
class OutlierConfig:
    inlier_threshold: float = 10.0
    mode: str = "exact"
    epsilon: float = 0.4
    solver: SolveOptions = field(default_factory=SolveOptions)
    rng_seed: int = 0

    def __post_init__(self):
        mode = {"exact_support_removal": "exact", "coreset_top4": "coreset"}.get(self.mode, self.mode)
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not (self.inlier_threshold > 0 and math.isfinite(self.inlier_threshold)):
            raise ValueError("inlier_threshold must be positive and finite")
        if mode == "coreset" and not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1] in coreset mode")


@dataclass(frozen=True)
class OutlierResult:
    """Surviving indices, the exact fit on them and per-round bookkeeping.

    Unpacks as ``inliers, solution``.
    """

    inliers: tuple
    solution: Solution
    rounds: int
    removed: tuple
    solver_seconds: float

    def __iter__(self):
        return iter((self.inliers, self.solution))


def _top_violators(r: np.ndarray, idx: list, threshold: float, k: int) -> list:
    """Up to ``k`` indices with the largest residuals above ``threshold``; ties to lower index."""
    over = [(float(-r[n]), i) for n, i in enumerate(idx) if r[n] > threshold]
    over.sort()
    return [i for _, i in over[:k]]


def remove_outliers(instance: TriangulationInstance, config: OutlierConfig | None = None) -> OutlierResult:
    cfg = config or OutlierConfig()
    opts = cfg.solver
    remaining = list(range(instance.n))
    removed = []
    rounds = 0
    spent = 0.0
    x = None
    while True:
        if cfg.mode == "exact":
            t0 = time.perf_counter()
            sol = solve(instance, remaining, opts, start=x)
            spent += time.perf_counter() - t0
            x = sol.x
            worst = sol.delta
            drop = list(sol.support) if worst > cfg.inlier_threshold else []
        else:
            sub = instance.subset(remaining)
            seed = int(np.random.SeedSequence([int(cfg.rng_seed), rounds]).generate_state(1)[0])
            t0 = time.perf_counter()
            cr = run_coreset(sub, CoresetConfig(epsilon=cfg.epsilon, solver=opts, rng_seed=seed,
                                                record_trace=False), start=x)
            spent += time.perf_counter() - t0
            x = cr.x_s
            r = full_residuals(instance, x, opts.norm_p)[remaining]
            worst = float(r.max())
            drop = _top_violators(r, remaining, cfg.inlier_threshold, TOP_K)
        if worst <= cfg.inlier_threshold:
            break
        drop_set = set(drop)
        remaining = [i for i in remaining if i not in drop_set]
        removed.extend(sorted(drop_set))
        rounds += 1
        if len(remaining) < 2:
            raise Exhausted(
                f"{len(remaining)} observation(s) left after {rounds} rounds; "
                f"threshold {cfg.inlier_threshold} never met"
            )
        if x is not None and not np.all(instance.cone_stack.depths(x, remaining) > 0.0):
            x = None

    if cfg.mode == "exact":
        final = sol
    else:
        t0 = time.perf_counter()
        final = solve(instance, remaining, opts, start=x)
        spent += time.perf_counter() - t0
    return OutlierResult(inliers=tuple(remaining), solution=final, rounds=rounds,
                         removed=tuple(removed), solver_seconds=spent)
