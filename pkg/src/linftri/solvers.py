"""Globally optimal min-max reprojection error on a subset of observations.

Two quasiconvex solvers share the convex subproblem in :mod:`linftri.inner`:

* bisection on the level ``gamma`` with a feasibility test per level;
* Dinkelbach iterations ``delta_{k+1} = max_i f_i(x_k) / g_i(x_k)`` with
  ``x_k = argmin max_i f_i - delta_k g_i``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .errors import BudgetExhausted, CheiralityCollapse, DegenerateGeometry
from .geometry import ConeStack, TriangulationInstance, linear_initial_estimate, normalize_norm
from . import _kernel_py
from .inner import MAX_EVALS, TOL_INNER, InnerProblem, _kernel, kernel_data, level_test, minimize_maxcone

log = logging.getLogger(__name__)

METHODS = ("bisection", "dinkelbach")
LOOSE_FACTOR = 1e-3
WARM_TAU_FACTOR = 0.1


@dataclass(frozen=True)
class SolveOptions:
    norm_p: float = 2
    method: str = "dinkelbach"
    tol_delta: float = 1e-9
    tol_support: float = 1e-6
    tol_inner: float = TOL_INNER
    max_evals: int = MAX_EVALS
    max_outer: int = 200
    backend: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "norm_p", normalize_norm(self.norm_p))
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("tol_delta", "tol_support", "tol_inner"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite")

    def with_(self, **kw) -> "SolveOptions":
        return replace(self, **kw)


@dataclass(frozen=True)
class Solution:
    """Minimiser ``x`` and minimised max residual ``delta`` over ``subset``.

    ``support`` holds instance indices (members of ``subset``) whose residual
    is within ``tol_support`` of ``delta``.
    """

    x: np.ndarray
    delta: float
    support: tuple
    solver_iters: int
    subset: tuple = field(default=(), repr=False)
    method: str = "dinkelbach"
    norm_p: float = 2
    deltas: tuple = field(default=(), repr=False)


def _subset_indices(instance: TriangulationInstance, subset) -> np.ndarray:
    if subset is None:
        return np.arange(instance.n, dtype=np.intp)
    idx = np.asarray(list(subset), dtype=np.intp)
    if idx.size == 0:
        raise ValueError("cannot solve on an empty subset")
    if idx.min() < 0 or idx.max() >= instance.n:
        raise IndexError("subset index out of range")
    return idx


def _cheiral(stack: ConeStack, x, idx) -> bool:
    return x is not None and bool(np.all(stack.depths(np.asarray(x, float), idx) > 0.0))


def _cheiral_lp_point(stack: ConeStack, idx) -> np.ndarray:
    """Point maximising the smallest normalised depth, inside a large box."""
    c = stack.c[idx]
    d = stack.d[idx]
    nrm = np.linalg.norm(c, axis=1)
    centers = [-np.linalg.solve(P[:, :3], P[:, 3]) for P in stack.P[idx]]
    box = 1e3 * (1.0 + max(float(np.linalg.norm(ci)) for ci in centers))
    # variables (x, t): maximise t subject to c_i.x + d_i >= t |c_i|, t <= box
    A_ub = np.hstack([-c, nrm[:, None]])
    res = linprog(
        c=[0.0, 0.0, 0.0, -1.0], A_ub=A_ub, b_ub=d,
        bounds=[(-box, box)] * 3 + [(None, box)], method="highs",
    )
    if res.status != 0 or not res.x[3] > 0.0:
        raise CheiralityCollapse("no point lies in front of every camera of the subset")
    return np.asarray(res.x[:3], float)


def starting_point(instance: TriangulationInstance, subset=None, start=None) -> np.ndarray:
    """A point in front of every camera of ``subset``.

    Tries, in order: the caller's ``start``; the linear estimate; the centroid
    of the camera centres pushed one unit along the mean viewing direction;
    the deepest point of the cheirality polyhedron.
    """
    stack = instance.cone_stack
    idx = _subset_indices(instance, subset)
    if _cheiral(stack, start, idx):
        return np.array(start, dtype=float)
    if idx.size >= 2:
        try:
            x = linear_initial_estimate(instance, idx)
        except DegenerateGeometry:
            x = None
        if _cheiral(stack, x, idx):
            return x
    P = stack.P[idx]
    centers = np.array([-np.linalg.solve(Pi[:, :3], Pi[:, 3]) for Pi in P])
    axes = P[:, 2, :3] / np.linalg.norm(P[:, 2, :3], axis=1)[:, None]
    mean_axis = axes.sum(axis=0)
    nrm = np.linalg.norm(mean_axis)
    if nrm > 1e-12:
        x = centers.mean(axis=0) + mean_axis / nrm
        if _cheiral(stack, x, idx):
            return x
    return _cheiral_lp_point(stack, idx)


def _on_ray(stack: ConeStack, i: int, depth: float) -> np.ndarray:
    """Point on the observing ray of observation ``i`` with the given depth."""
    P = stack.P[i]
    rhs = depth * np.append(stack.u[i], 1.0) - P[:, 3]
    return np.linalg.solve(P[:, :3], rhs)


def _single(instance, idx, start, opts: SolveOptions) -> Solution:
    stack = instance.cone_stack
    i = int(idx[0])
    depth = 1.0
    if start is not None and _cheiral(stack, start, idx):
        depth = float(stack.depths(np.asarray(start, float), idx)[0])
    x = _on_ray(stack, i, depth)
    delta = float(stack.residuals(x, opts.norm_p, idx).max())
    return Solution(x=x, delta=delta, support=(i,), solver_iters=0, subset=(i,),
                    method=opts.method, norm_p=opts.norm_p, deltas=(delta,))


def support_from_residuals(r: np.ndarray, idx: np.ndarray, delta: float, tol_support: float) -> tuple:
    """Members of ``idx`` whose residual ``r`` is within ``tol_support`` of ``delta``."""
    thr = delta * (1.0 - tol_support) if delta > 1e-9 else delta - 1e-9
    members = tuple(idx[r >= thr].tolist())
    return members or (int(idx[int(np.argmax(r))]),)


def _finish(instance, idx, x, iters, opts, deltas) -> Solution:
    x = np.asarray(x, float)
    r = instance.cone_stack.residuals(x, opts.norm_p, idx)
    delta = float(r.max())
    return Solution(x=x, delta=delta, support=support_from_residuals(r, idx, delta, opts.tol_support),
                    solver_iters=iters, subset=tuple(idx.tolist()), method=opts.method,
                    norm_p=opts.norm_p, deltas=tuple(deltas))


def solve_bisection(instance: TriangulationInstance, subset=None, opts: SolveOptions | None = None,
                    start=None) -> Solution:
    opts = opts or SolveOptions()
    if opts.method != "bisection":
        opts = opts.with_(method="bisection")
    idx = _subset_indices(instance, subset)
    if idx.size == 1:
        return _single(instance, idx, start, opts)
    stack = instance.cone_stack
    sub = stack.take(idx)
    x_best = starting_point(instance, idx, start)
    lo = 0.0
    hi = float(sub.residuals(x_best, opts.norm_p).max())
    his = [hi]
    iters = 0
    while hi - lo > opts.tol_delta * (1.0 + hi):
        if iters >= opts.max_outer:
            raise BudgetExhausted(f"bisection did not close the bracket in {iters} steps")
        mid = 0.5 * (lo + hi)
        ok, res = level_test(sub, mid, x_best, tol=opts.tol_inner, p=opts.norm_p,
                             backend=opts.backend, max_evals=opts.max_evals)
        if ok:
            hi = mid
            x_best = res.x
        else:
            if not res.converged and res.value - res.gap_estimate <= opts.tol_inner:
                log.warning("bisection level %.6g judged infeasible without a certificate", mid)
            lo = mid
        his.append(hi)
        iters += 1
    # centre the estimate within the final level set so that the support is balanced
    res = minimize_maxcone(
        InnerProblem.build(sub, hi, x_best, p=opts.norm_p, tol_inner=opts.tol_inner,
                           max_evals=opts.max_evals),
        backend=opts.backend,
    )
    x = x_best
    if np.all(sub.depths(res.x) > 0.0):
        if sub.residuals(res.x, opts.norm_p).max() <= sub.residuals(x_best, opts.norm_p).max() * (1 + 1e-9) + 1e-12:
            x = res.x
    return _finish(instance, idx, x, iters, opts, his)


def dinkelbach_core(stack: ConeStack, idx: np.ndarray, x0: np.ndarray, opts: SolveOptions):
    """Run the Dinkelbach kernel on ``idx`` from a point in front of all its cameras.

    Returns ``(x, iters, deltas)``; no validation beyond the kernel outcome.
    """
    A, b = stack.A.take(idx, 0), stack.b.take(idx, 0)
    kind, E, e = kernel_data(A, b, opts.norm_p)
    x, _, iters, _, outcome, deltas = _kernel(opts.backend).dinkelbach(
        kind, E, e, A, b, stack.c.take(idx, 0), stack.d.take(idx), x0, opts.tol_inner,
        opts.tol_delta, opts.max_evals, opts.max_outer, LOOSE_FACTOR, WARM_TAU_FACTOR,
    )
    if outcome == _kernel_py.OUTER_BUDGET:
        raise BudgetExhausted(f"Dinkelbach did not converge in {iters} iterations")
    if outcome == _kernel_py.OUTER_ROSE:
        # the subproblem cannot increase the ratio; this only reflects round-off
        log.warning("Dinkelbach ratio rose at iteration %d; keeping the best iterate", iters)
    if deltas.size > 1 and np.any(deltas[1:] > deltas[:-1]):
        raise AssertionError("Dinkelbach ratios are not monotone")
    return x, int(iters), deltas


def solve_dinkelbach(instance: TriangulationInstance, subset=None, opts: SolveOptions | None = None,
                     start=None) -> Solution:
    opts = opts or SolveOptions()
    if opts.method != "dinkelbach":
        opts = opts.with_(method="dinkelbach")
    idx = _subset_indices(instance, subset)
    if idx.size == 1:
        return _single(instance, idx, start, opts)
    x0 = starting_point(instance, idx, start)
    x, iters, deltas = dinkelbach_core(instance.cone_stack, idx, x0, opts)
    return _finish(instance, idx, x, iters, opts, deltas.tolist())


def solve(instance: TriangulationInstance, subset=None, opts: SolveOptions | None = None,
          start=None) -> Solution:
    opts = opts or SolveOptions()
    fn = solve_bisection if opts.method == "bisection" else solve_dinkelbach
    return fn(instance, subset, opts, start=start)


def extract_support(instance: TriangulationInstance, subset, solution: Solution,
                    opts: SolveOptions | None = None) -> tuple:
    """Indices of ``subset`` whose residual at ``solution.x`` is within tolerance of delta.

    When ``delta <= 1e-9`` (noiseless data) every index qualifies.
    """
    opts = opts or SolveOptions(norm_p=solution.norm_p)
    idx = _subset_indices(instance, subset)
    r = instance.cone_stack.residuals(solution.x, solution.norm_p, idx)
    delta = float(solution.delta)
    if delta > 1e-9:
        thr = delta * (1.0 - opts.tol_support)
    else:
        thr = delta - 1e-9
    members = tuple(int(i) for i in idx[r >= thr])
    if not members:
        members = (int(idx[int(np.argmax(r))]),)
    return members
