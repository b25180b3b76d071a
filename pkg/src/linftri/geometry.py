"""Camera model, reprojection residuals and the cone-form rewrite of a residual.

A residual ``||u - P^{1:2} x~ / P^3 x~||_p`` is rewritten as the ratio
``||A x + b||_p / (c.x + d)`` of a convex numerator over an affine
denominator (the depth).  Every residual in the package is evaluated through
that form, either one observation at a time (:func:`residual`) or for a whole
instance at once (:class:`ConeStack`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from .errors import CheiralityViolation, DegenerateGeometry

INF = math.inf
NORMS = (1, 2, INF)


def normalize_norm(p) -> float:
    """Map ``1``, ``2``, ``inf``/``"inf"`` onto the canonical norm values."""
    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("inf", "infinity", "linf"):
            return INF
        p = float(key)
    p = float(p)
    if p == 1.0:
        return 1
    if p == 2.0:
        return 2
    if math.isinf(p) and p > 0:
        return INF
    raise ValueError(f"unsupported residual norm {p!r}; expected 1, 2 or inf")


def norm_label(p) -> str:
    p = normalize_norm(p)
    return "inf" if p == INF else str(int(p))


def _pnorm(v: np.ndarray, p) -> np.ndarray:
    """p-norm along the last axis."""
    if p == 2:
        return np.sqrt(np.sum(v * v, axis=-1))
    if p == 1:
        return np.sum(np.abs(v), axis=-1)
    return np.max(np.abs(v), axis=-1)


@dataclass(frozen=True)
class CameraMatrix:
    """A finite 3x4 projective camera."""

    entries: np.ndarray

    def __post_init__(self):
        P = np.array(self.entries, dtype=float)
        if P.shape != (3, 4):
            raise ValueError(f"camera matrix must be 3x4, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ValueError("camera matrix has non-finite entries")
        if not np.any(P[2] != 0.0):
            raise ValueError("third row of the camera matrix is identically zero")
        P.setflags(write=False)
        object.__setattr__(self, "entries", P)

    @classmethod
    def from_krt(cls, K, R, t) -> "CameraMatrix":
        """Build ``K [R | t]``."""
        Rt = np.hstack([np.asarray(R, float), np.asarray(t, float).reshape(3, 1)])
        return cls(np.asarray(K, float) @ Rt)

    def depth(self, x) -> float:
        """``P^3 x~`` (positive in front of the camera)."""
        P = self.entries
        return float(P[2, :3] @ np.asarray(x, float) + P[2, 3])

    @property
    def center(self) -> np.ndarray:
        """Camera centre, the right null vector of P (finite cameras only)."""
        M = self.entries[:, :3]
        return -np.linalg.solve(M, self.entries[:, 3])

    @property
    def principal_axis(self) -> np.ndarray:
        """Unit viewing direction (points with positive depth lie along it)."""
        v = self.entries[2, :3]
        return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Observation:
    camera_index: int
    point2: tuple

    def __post_init__(self):
        idx = int(self.camera_index)
        if idx < 0:
            raise ValueError("camera_index must be non-negative")
        u = tuple(float(v) for v in self.point2)
        if len(u) != 2 or not all(math.isfinite(v) for v in u):
            raise ValueError(f"observation must be a finite 2-vector, got {self.point2!r}")
        object.__setattr__(self, "camera_index", idx)
        object.__setattr__(self, "point2", u)


@dataclass(frozen=True)
class ConeForm:
    """``residual = ||A x + b||_p / (c.x + d)`` for one observation."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float
    norm_p: float = 2

    def numerator(self, x) -> float:
        return float(_pnorm(self.A @ np.asarray(x, float) + self.b, self.norm_p))

    def denominator(self, x) -> float:
        return float(self.c @ np.asarray(x, float) + self.d)

    def ratio(self, x) -> float:
        g = self.denominator(x)
        if not g > 0.0:
            raise CheiralityViolation(f"depth {g!r} is not positive")
        return self.numerator(x) / g


def to_cone_form(camera: CameraMatrix, obs: Observation, p=2) -> ConeForm:
    P = camera.entries
    u = np.asarray(obs.point2, float)
    A = u[:, None] * P[2, :3][None, :] - P[:2, :3]
    b = u * P[2, 3] - P[:2, 3]
    return ConeForm(A=A, b=b, c=P[2, :3].copy(), d=float(P[2, 3]), norm_p=normalize_norm(p))


def project(camera: CameraMatrix, x) -> np.ndarray:
    P = camera.entries
    xh = np.append(np.asarray(x, float), 1.0)
    w = P[2] @ xh
    if not w > 0.0:
        raise CheiralityViolation(f"point has depth {w!r} in the camera")
    return (P[:2] @ xh) / w


def residual(camera: CameraMatrix, obs: Observation, x, p=2) -> float:
    return to_cone_form(camera, obs, p).ratio(x)


def displacement_k(camera: CameraMatrix, x_new, x_old) -> float:
    """Image-plane (l2) distance between the projections of two points."""
    return float(np.linalg.norm(project(camera, x_new) - project(camera, x_old)))


def obtuse_test(camera, obs, x_star, x, delta_at_star, p=2) -> bool:
    """Cosine-rule test for an obtuse angle ``u : f(x_star) : f(x)``.

    Ties (right angles, including ``x == x_star``) are not obtuse.
    """
    r = residual(camera, obs, x, p)
    k = displacement_k(camera, x, x_star)
    tol_angle = 1e-9 * (1.0 + r * r)
    lhs = r * r
    rhs = k * k + float(delta_at_star) ** 2
    return bool(lhs - rhs > tol_angle)


@dataclass(frozen=True)
class TriangulationInstance:
    cameras: tuple
    observations: tuple
    ground_truth: Any = None
    inlier_mask: Any = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        cams = tuple(c if isinstance(c, CameraMatrix) else CameraMatrix(c) for c in self.cameras)
        obs = tuple(
            o if isinstance(o, Observation) else Observation(int(o[0]), (o[1], o[2]))
            for o in self.observations
        )
        if len(obs) < 1:
            raise ValueError("an instance needs at least one observation")
        for i, o in enumerate(obs):
            if o.camera_index >= len(cams):
                raise ValueError(
                    f"observation {i} references camera {o.camera_index} of {len(cams)}"
                )
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "observations", obs)
        if self.ground_truth is not None:
            gt = np.array(self.ground_truth, dtype=float).reshape(3)
            gt.setflags(write=False)
            object.__setattr__(self, "ground_truth", gt)
            for i, o in enumerate(obs):
                if not cams[o.camera_index].depth(gt) > 0.0:
                    raise ValueError(f"ground truth is behind the camera of observation {i}")
        if self.inlier_mask is not None:
            mask = tuple(bool(v) for v in self.inlier_mask)
            if len(mask) != len(obs):
                raise ValueError("inlier mask length differs from the observation count")
            object.__setattr__(self, "inlier_mask", mask)

    @property
    def n(self) -> int:
        return len(self.observations)

    def camera_of(self, i: int) -> CameraMatrix:
        return self.cameras[self.observations[i].camera_index]

    def cone(self, i: int, p=2) -> ConeForm:
        return to_cone_form(self.camera_of(i), self.observations[i], p)

    @cached_property
    def cone_stack(self) -> "ConeStack":
        return ConeStack.from_instance(self)

    def subset(self, idx) -> "TriangulationInstance":
        """Instance restricted to observations ``idx``, sharing cameras and cone data."""
        idx = [int(i) for i in idx]
        mask = None if self.inlier_mask is None else tuple(self.inlier_mask[i] for i in idx)
        sub = TriangulationInstance(self.cameras, tuple(self.observations[i] for i in idx),
                                    ground_truth=self.ground_truth, inlier_mask=mask)
        sub.__dict__["cone_stack"] = self.cone_stack.take(idx)
        return sub

    def residuals(self, x, p=2, subset=None) -> np.ndarray:
        return self.cone_stack.residuals(x, p, subset)

    def max_residual(self, x, p=2, subset=None) -> float:
        return float(np.max(self.residuals(x, p, subset)))


@dataclass(frozen=True)
class ConeStack:
    """Cone forms of all observations of an instance as stacked arrays."""

    A: np.ndarray  # (N, 2, 3)
    b: np.ndarray  # (N, 2)
    c: np.ndarray  # (N, 3)
    d: np.ndarray  # (N,)
    P: np.ndarray  # (N, 3, 4) camera of each observation
    u: np.ndarray  # (N, 2)

    @classmethod
    def from_instance(cls, inst: TriangulationInstance) -> "ConeStack":
        P = np.stack([inst.camera_of(i).entries for i in range(inst.n)])
        u = np.array([o.point2 for o in inst.observations], dtype=float)
        A = u[:, :, None] * P[:, 2, None, :3] - P[:, :2, :3]
        b = u * P[:, 2, None, 3] - P[:, :2, 3]
        c = P[:, 2, :3].copy()
        d = P[:, 2, 3].copy()
        for arr in (A, b, c, d, P, u):
            arr.setflags(write=False)
        return cls(A=A, b=b, c=c, d=d, P=P, u=u)

    def take(self, subset) -> "ConeStack":
        idx = np.asarray(subset, dtype=np.intp)
        return ConeStack(self.A[idx], self.b[idx], self.c[idx], self.d[idx], self.P[idx], self.u[idx])

    def __len__(self):
        return self.d.shape[0]

    def depths(self, x, subset=None) -> np.ndarray:
        c, d = (self.c, self.d) if subset is None else (self.c.take(subset, 0), self.d.take(subset))
        return c @ np.asarray(x, float) + d

    def offsets(self, x, subset=None) -> np.ndarray:
        """``A_i x + b_i`` for every cone, shape ``(n, 2)``."""
        A, b = (self.A, self.b) if subset is None else (self.A.take(subset, 0), self.b.take(subset, 0))
        return (A.reshape(-1, 3) @ np.asarray(x, float) + b.reshape(-1)).reshape(-1, 2)

    def numerators(self, x, p=2, subset=None) -> np.ndarray:
        w = self.offsets(x, subset)
        p = p if p in (1, 2) else normalize_norm(p)
        if p == 2:
            return np.hypot(w[:, 0], w[:, 1])
        if p == 1:
            return np.abs(w[:, 0]) + np.abs(w[:, 1])
        return np.maximum(np.abs(w[:, 0]), np.abs(w[:, 1]))

    def residuals(self, x, p=2, subset=None) -> np.ndarray:
        g = self.depths(x, subset)
        if not (g > 0.0).all():
            bad = int(np.argmin(g))
            raise CheiralityViolation(f"point has depth {g[bad]!r} in observation {bad} of the set")
        return self.numerators(x, p, subset) / g

    def projections(self, x, subset=None) -> np.ndarray:
        P = self.P if subset is None else self.P.take(subset, 0)
        w = P[:, :, :3] @ np.asarray(x, float) + P[:, :, 3]
        return w[:, :2] / w[:, 2:3]


def linear_initial_estimate(instance: TriangulationInstance, subset: Sequence[int] | None = None) -> np.ndarray:
    """Least-squares solution of the stacked linear constraints ``A_i x + b_i = 0``.

    Solves the 3x3 normal equations; the result may lie behind some cameras.
    """
    stack = instance.cone_stack
    idx = np.arange(instance.n) if subset is None else np.asarray(list(subset), dtype=np.intp)
    if idx.size < 2:
        raise DegenerateGeometry("at least two observations are needed for a linear estimate")
    A = stack.A[idx].reshape(-1, 3)
    b = stack.b[idx].reshape(-1)
    M = A.T @ A
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > 1e12:
        raise DegenerateGeometry("normal equations are rank deficient (parallel rays)")
    return np.linalg.solve(M, -A.T @ b)
