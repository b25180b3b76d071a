"""Convex min-max subproblem shared by the bisection and Dinkelbach solvers.

For a level ``gamma`` the subproblem is::

    minimise  phi(x) = max_i  ||A_i x + b_i||_p - gamma * (c_i . x + d_i)

over points in front of every camera.  ``phi`` is convex, and ``min phi <= 0``
exactly when some point attains a max residual of at most ``gamma``.

For ``p = 1`` and ``p = inf`` each cone is expanded into four affine pieces
(``|a| + |b|`` and ``max(|a|, |b|)`` are maxima of signed sums), so only the
``p = 2`` case carries a curved numerator.  The heavy lifting is done by
``minimize_pieces`` from the compiled ``_kernel`` extension when it is
importable, otherwise by the numpy fallback in ``_kernel_py``.  Set
``LINFTRI_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernel_py
from .errors import CheiralityCollapse
from .geometry import INF, ConeForm, ConeStack, normalize_norm

log = logging.getLogger(__name__)

try:
    from . import _kernel as _compiled
except ImportError:  # extension not built
    _compiled = None

_KERNELS = {"python": _kernel_py}
if _compiled is not None:
    _KERNELS["compiled"] = _compiled

if os.environ.get("LINFTRI_BACKEND", "").lower() == "python" or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"

TOL_INNER = 1e-9
MAX_EVALS = 20000
BALL_FACTOR = _kernel_py.BALL_FACTOR


def available_backends() -> list[str]:
    return sorted(_KERNELS)


def set_backend(name: str) -> None:
    """Select the kernel used by default for every subsequent inner solve."""
    global BACKEND
    if name not in _KERNELS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    BACKEND = name


def _kernel(backend):
    return _KERNELS[backend or BACKEND]


def _as_arrays(cones):
    """Normalise a ConeStack or a list of ConeForm into stacked arrays."""
    if isinstance(cones, ConeStack):
        return cones.A, cones.b, cones.c, cones.d, None
    cones = list(cones)
    if not cones:
        raise ValueError("the inner problem needs at least one cone")
    norms = {normalize_norm(c.norm_p) for c in cones}
    if len(norms) != 1:
        raise ValueError("all cones of an inner problem must share one norm")
    A = np.array([c.A for c in cones], dtype=float)
    b = np.array([c.b for c in cones], dtype=float)
    c = np.array([c.c for c in cones], dtype=float)
    d = np.array([c.d for c in cones], dtype=float)
    return A, b, c, d, norms.pop()


def numerator_pieces(A, b, p):
    """``(E, e)`` with ``||A_i x + b_i||_p = max_s E_{s m + i} . x + e_{s m + i}``.

    Only for ``p = 1`` and ``p = inf``; rows come in four blocks of ``m``.
    """
    return _kernel_py.pieces(A, b, normalize_norm(p) == INF)


def kernel_data(A, b, p):
    """``(kind, E, e)`` arguments for the kernel entry points."""
    if normalize_norm(p) == 2:
        return 2, _EMPTY_E, _EMPTY_e
    E, e = numerator_pieces(A, b, p)
    return 0, E, e


_EMPTY_E = np.zeros((1, 3))
_EMPTY_e = np.zeros(1)


@dataclass(frozen=True, eq=False)
class InnerProblem:
    """Cones (same norm), a level ``gamma`` and a start in front of all cameras."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    norm_p: float
    gamma: float
    start: np.ndarray
    tol_inner: float = TOL_INNER
    max_evals: int = MAX_EVALS

    @classmethod
    def build(cls, cones, gamma, start, p=None, tol_inner=TOL_INNER, max_evals=MAX_EVALS):
        A, b, c, d, cone_norm = _as_arrays(cones)
        norm_p = normalize_norm(p if p is not None else (cone_norm if cone_norm is not None else 2))
        if cone_norm is not None and p is not None and normalize_norm(p) != cone_norm:
            raise ValueError("explicit norm disagrees with the cone forms")
        return cls(A=np.ascontiguousarray(A, float), b=np.ascontiguousarray(b, float),
                   c=np.ascontiguousarray(c, float), d=np.ascontiguousarray(d, float),
                   norm_p=norm_p, gamma=float(gamma), start=np.array(start, dtype=float).reshape(3),
                   tol_inner=float(tol_inner), max_evals=int(max_evals))

    def __post_init__(self):
        if self.d.shape[0] < 1:
            raise ValueError("the inner problem needs at least one cone")
        if not math.isfinite(self.gamma) or self.gamma < 0.0:
            raise ValueError(f"gamma must be finite and non-negative, got {self.gamma!r}")
        if not self.tol_inner > 0.0 or self.max_evals < 1:
            raise ValueError("tol_inner and max_evals must be positive")

    @property
    def m(self) -> int:
        return int(self.d.shape[0])

    def numerators(self, x) -> np.ndarray:
        r = self.A @ x + self.b
        if self.norm_p == 2:
            return np.sqrt(np.einsum("ij,ij->i", r, r))
        if self.norm_p == 1:
            return np.abs(r).sum(axis=1)
        return np.abs(r).max(axis=1)

    def depths(self, x) -> np.ndarray:
        return self.c @ x + self.d

    def objective(self, x) -> float:
        """Exact ``max_i f_i(x) - gamma * g_i(x)``."""
        x = np.asarray(x, float)
        return float(np.max(self.numerators(x) - self.gamma * self.depths(x)))

    def affine_pieces(self):
        """``(E, e)`` with ``phi(x) = max_k E_k . x + e_k`` (p = 1 or inf only)."""
        E, e = numerator_pieces(self.A, self.b, self.norm_p)
        reps = E.shape[0] // self.m
        E = E - self.gamma * np.tile(self.c, (reps, 1))
        e = e - self.gamma * np.tile(self.d, reps)
        return E, e


@dataclass(frozen=True)
class InnerResult:
    x: np.ndarray
    value: float
    evals: int
    converged: bool
    gap_estimate: float = math.inf
    target_reached: bool = False


def minimize_maxcone(problem: InnerProblem, target=None, backend=None, tau0=None) -> InnerResult:
    """Minimise ``phi`` for one level.

    With ``target`` set, the search stops as soon as an iterate with
    ``phi <= target`` is found (``target_reached``); the result is then a
    certificate, not a minimiser.  When the evaluation budget runs out the
    best iterate so far is returned with ``converged=False``.

    ``tau0`` caps the initial smoothing temperature; pass roughly the expected
    suboptimality of a warm start to skip the coarse stages.
    """
    x0 = problem.start
    if not np.all(problem.depths(x0) > 0.0):
        raise CheiralityCollapse("inner start point is not in front of every camera")
    kind, E, e = kernel_data(problem.A, problem.b, problem.norm_p)
    kern = _kernel(backend)
    x, _, evals, status, gap, dec2 = kern.minimize_level(
        kind, E, e, problem.A, problem.b, problem.c, problem.d, problem.gamma, x0,
        problem.tol_inner, problem.max_evals,
        0.0 if target is None else float(target), target is not None,
        -1.0 if tau0 is None else float(tau0),
    )
    x = np.asarray(x, dtype=float)
    value = problem.objective(x)
    converged = status == _kernel_py.CONVERGED or (
        status == _kernel_py.STALLED and 0.5 * dec2 <= 0.5 * problem.tol_inner
    )
    if status == _kernel_py.BUDGET:
        log.debug("inner solve hit its evaluation budget (%d evals)", evals)
    return InnerResult(x=x, value=value, evals=int(evals), converged=bool(converged),
                       gap_estimate=float(gap), target_reached=status == _kernel_py.TARGET_REACHED)


def feasible_at_level(cones, gamma, start, tol=TOL_INNER, p=None, backend=None) -> bool:
    """True iff some point in front of all cameras has every residual <= gamma.

    ``value <= +tol`` counts as feasible.
    """
    return level_test(cones, gamma, start, tol=tol, p=p, backend=backend)[0]


def level_test(cones, gamma, start, tol=TOL_INNER, p=None, backend=None, max_evals=MAX_EVALS):
    """Feasibility verdict plus the inner result that decided it."""
    prob = InnerProblem.build(cones, gamma, start, p=p, tol_inner=tol, max_evals=max_evals)
    res = minimize_maxcone(prob, target=0.0, backend=backend)
    return res.value <= tol, res
