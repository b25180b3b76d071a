"""Coreset meta-algorithm for min-max triangulation.

The loop grows a small index set ``C`` by repeatedly inserting the observation
with the largest residual at the current subset optimum.  An insertion whose
image-plane step looks larger to the new camera than to every obtuse support
member (Condition 2) is absorbed without advancing the counter ``t``; this is
what makes the ``1 + 2/t`` bound hold at every effective ``t``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel_py
from .errors import BudgetExhausted, DomainError
from .geometry import TriangulationInstance
from .inner import _kernel
from .solvers import LOOSE_FACTOR, WARM_TAU_FACTOR, SolveOptions, solve, starting_point

log = logging.getLogger(__name__)

@dataclass(frozen=True)
class CoresetConfig:
    """``epsilon = 0`` runs to the global optimum (cap ``max(N - 3, 1)``)."""

    epsilon: float = 0.01
    solver: SolveOptions = field(default_factory=SolveOptions)
    rng_seed: int = 0
    record_trace: bool = True

    def __post_init__(self):
        eps = float(self.epsilon)
        if not (math.isfinite(eps) and eps >= 0.0):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)

    def iteration_cap(self, n: int) -> int:
        if self.epsilon == 0.0:
            return max(n - 3, 1)
        # guard against 2/eps landing a hair above an integer
        return max(1, math.ceil(2.0 / self.epsilon - 1e-9))


@dataclass(frozen=True)
class CoresetTraceEntry:
    """One traversal of the main loop.

    ``t`` is the counter when the traversal started and ``t_eff`` the counter
    whose estimate the traversal produced (``t - 1`` for Condition 2).
    ``incumbent_gamma`` is the full-data max residual of the incumbent after the
    post-hoc refinement step has seen the new estimate.
    """

    t: int
    t_eff: int
    coreset_size: int
    delta_t: float
    q: int
    worst_residual: float
    condition2: bool
    incumbent_updated: bool
    incumbent_gamma: float
    j: int = -1
    fallback: bool = False


@dataclass(frozen=True)
class CoresetResult:
    """Incumbent ``(coreset, x_s, delta_s)`` and loop statistics.

    ``gamma`` is the full-data max residual of ``x_s``; ``t_final`` is the
    counter of the last estimate (the initial solve counts as 1), so that
    ``t_final - 1 + V == loop_traversals``; ``inserted`` is the whole index
    set grown by the loop, of which ``coreset`` is a prefix.
    """

    coreset: tuple
    x_s: np.ndarray
    delta_s: float
    gamma: float
    global_flag: bool
    V: int
    loop_traversals: int
    alpha: float
    trace: tuple
    t_final: int = 1
    delta_1: float = 0.0
    initial_subset: tuple = ()
    inserted: tuple = ()
    fallbacks: int = 0

    @property
    def coreset_size(self) -> int:
        return len(self.coreset)


@dataclass(frozen=True)
class ConditionVerdict:
    condition: int
    j: int
    k_j: float
    k_q: float
    fallback: bool = False

    @property
    def condition2(self) -> bool:
        return self.condition == 2


def image_errors(instance: TriangulationInstance, x, p=2):
    """Per-observation image error ``u_i - pi_i(x)`` and its p-norm.

    Returns ``(err, r)`` with ``err`` of shape ``(N, 2)``; rows where ``x`` is
    not in front of the camera are ``inf``.
    """
    st = instance.cone_stack
    x = np.asarray(x, float)
    g = st.depths(x)
    w = st.offsets(x)
    ok = g > 0.0
    if ok.all():
        err = w / g[:, None]
    else:
        err = np.full(w.shape, math.inf)
        err[ok] = w[ok] / g[ok, None]
    if p == 2:
        r = np.hypot(err[:, 0], err[:, 1])
    elif p == 1:
        r = np.abs(err[:, 0]) + np.abs(err[:, 1])
    else:
        r = np.maximum(np.abs(err[:, 0]), np.abs(err[:, 1]))
    return err, r


def full_residuals(instance: TriangulationInstance, x, p=2) -> np.ndarray:
    """Residuals over all data, ``inf`` where ``x`` is not in front of the camera."""
    return image_errors(instance, x, p)[1]


def classify_condition(instance: TriangulationInstance, support_prev, x_prev, x_cand, q: int,
                       p=2, state_prev=None, state_cand=None) -> ConditionVerdict:
    """Pick the obtuse support member ``j`` with the largest step and compare with ``q``.

    The obtuse test is the one of :func:`linftri.geometry.obtuse_test`, evaluated
    for all support members at once.  When no member passes it numerically, the
    member with the largest step is used and the verdict is Condition 1 with
    ``fallback`` set.  ``state_prev`` and ``state_cand`` may carry the
    :func:`image_errors` output at the two points.
    """
    err_old, r_prev = state_prev if state_prev is not None else image_errors(instance, x_prev, p)
    err_new, r_cand = state_cand if state_cand is not None else image_errors(instance, x_cand, p)
    sup = [int(j) for j in support_prev]
    cond, j, k_j, k_q, fb = _kernel_py.classify(sup, int(q), err_old, r_prev, err_new, r_cand)
    return ConditionVerdict(cond, j, k_j, k_q, fallback=fb)


_PCODE = {1: 1, 2: 2, math.inf: 3}


def run_coreset(instance: TriangulationInstance, config: CoresetConfig | None = None,
                start=None) -> CoresetResult:
    config = config or CoresetConfig()
    opts = config.solver
    p = opts.norm_p
    n = instance.n
    rng = np.random.default_rng(config.rng_seed)
    perm = rng.permutation(n)

    if n <= 4:
        sol = solve(instance, perm, opts, start=start)
        gam = float(full_residuals(instance, sol.x, p).max())
        coreset = tuple(int(i) for i in perm)
        return CoresetResult(coreset=coreset, x_s=sol.x, delta_s=sol.delta, gamma=gam,
                             global_flag=True, V=0, loop_traversals=0, alpha=0.0, trace=(),
                             t_final=1, delta_1=sol.delta, initial_subset=coreset, inserted=coreset)

    T = config.iteration_cap(n)
    sol = solve(instance, perm[:4], opts, start=start)
    st = instance.cone_stack

    def start_fn(idx):
        return starting_point(instance, idx)

    solve_fn = None
    if opts.method != "dinkelbach":
        def solve_fn(idx, x0):
            return solve(instance, idx, opts, start=x0).x

    out = _kernel(opts.backend).coreset_loop(
        _PCODE[p], st.A, st.b, st.c, st.d, perm, 4, sol.x, sol.delta, sol.support, T,
        opts.tol_inner, opts.tol_delta, opts.max_evals, opts.max_outer, LOOSE_FACTOR,
        WARM_TAU_FACTOR, opts.tol_support, config.record_trace, start_fn, solve_fn,
    )
    if out["status"] == _kernel_py.OUTER_BUDGET:
        raise BudgetExhausted("Dinkelbach did not converge on a coreset subset")
    if out["rose"]:
        log.warning("Dinkelbach ratio rose on %d coreset subset(s); kept the best iterates",
                    out["rose"])
    if out["warn_q"] >= 0:
        log.warning("worst datum %d already in the coreset; treating as converged", out["warn_q"])
    if out["fallbacks"]:
        log.info("no obtuse support member in %d traversal(s); used Condition 1",
                 out["fallbacks"])
    C = tuple(int(i) for i in out["C"])
    trace = ()
    if config.record_trace:
        tr = out["trace"]
        trace = tuple(
            CoresetTraceEntry(t=int(tr["t"][k]), t_eff=int(tr["t_eff"][k]),
                              coreset_size=int(tr["size"][k]), delta_t=float(tr["delta"][k]),
                              q=int(tr["q"][k]), worst_residual=float(tr["worst"][k]),
                              condition2=bool(tr["cond2"][k]), incumbent_updated=bool(tr["updated"][k]),
                              incumbent_gamma=float(tr["inc_gamma"][k]), j=int(tr["j"][k]),
                              fallback=bool(tr["fallback"][k]))
            for k in range(len(tr["t"]))
        )
    V, traversals = int(out["V"]), int(out["traversals"])
    return CoresetResult(coreset=C[:out["inc_len"]], x_s=out["x_inc"], delta_s=float(out["delta_inc"]),
                         gamma=float(out["gamma"]), global_flag=bool(out["g"]), V=V,
                         loop_traversals=traversals, alpha=V / traversals if traversals else 0.0,
                         trace=trace, t_final=int(out["t"]) - 1, delta_1=float(sol.delta),
                         initial_subset=tuple(int(i) for i in perm[:4]), inserted=C,
                         fallbacks=int(out["fallbacks"]))


def backtrack_bound(t: int) -> float:
    """Error-ratio bound ``1 + 2/t`` after the loop has run through counter ``t``."""
    if int(t) != t or t < 2:
        raise DomainError(f"backtrack bound needs an integer t >= 2, got {t!r}")
    return 1.0 + 2.0 / int(t)


def error_ratio(instance: TriangulationInstance, x, delta_star: float, p=2) -> float:
    """``max_i r_i(x) / delta_star`` with ``0/0 = 1`` for noiseless data."""
    num = float(full_residuals(instance, x, p).max())
    if delta_star <= 1e-9:
        if num <= 1e-9:
            return 1.0
        if num > 1e-6:
            raise DomainError(
                f"optimum {delta_star!r} is zero but the estimate has residual {num!r}"
            )
        return num / 1e-9
    return num / float(delta_star)
