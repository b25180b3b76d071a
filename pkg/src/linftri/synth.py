"""Synthetic triangulation instances with four camera layouts.

* ``A`` cameras evenly spaced on a line segment, looking at the scene centre;
* ``B`` cameras on a sphere with uniformly random orientations;
* ``C`` cameras evenly spaced on a circle, looking at the scene centre;
* ``D`` like ``B`` but in stereo pairs sharing one orientation.

All instances of one call share the same rig; each scene point is one
instance.  Randomness is derived from ``SeedSequence(rng_seed)``: child 0 drives
the rig and the points, child ``i + 1`` drives the noise of point ``i``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import GeometryRetryExhausted, MissingMetadata
from .geometry import CameraMatrix, Observation, TriangulationInstance

DISTRIBUTIONS = ("A", "B", "C", "D")
MAX_RESAMPLES = 1000

# values not fixed by the experimental protocol; echoed in every instance's metadata
UNSPECIFIED_DEFAULTS = ("focal", "principal_point", "orientation_jitter", "max_off_axis",
                        "scene_scale", "camera_distance", "stereo_baseline")


@dataclass(frozen=True)
class SyntheticConfig:
    distribution: str = "B"
    n_views: int = 100
    n_points: int = 1
    noise_sigma: float = 10.0
    outlier_fraction: float = 0.0
    outlier_sigma: float = 30.0
    focal: float = 1000.0
    principal_point: tuple = (512.0, 384.0)
    scene_scale: float = 2.0
    camera_distance: float = 10.0
    stereo_baseline: float = 0.5
    orientation_jitter: float = 5.0
    max_off_axis: float = 30.0
    rng_seed: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = str(self.distribution).upper()
        if d not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}")
        object.__setattr__(self, "distribution", d)
        object.__setattr__(self, "principal_point", tuple(float(v) for v in self.principal_point))
        if int(self.n_views) < 2:
            raise ValueError("n_views must be at least 2")
        if int(self.n_points) < 1:
            raise ValueError("n_points must be at least 1")
        if self.noise_sigma < 0 or self.outlier_sigma < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if not self.focal > 0:
            raise ValueError("focal length must be positive")
        if d == "D" and not self.stereo_baseline > 0:
            raise ValueError("stereo baseline must be positive")
        if not (self.scene_scale > 0 and self.camera_distance > 0):
            raise ValueError("scene scale and camera distance must be positive")
        if not 0.0 < self.max_off_axis < 90.0:
            raise ValueError("max_off_axis must lie in (0, 90) degrees")

    @property
    def K(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])

    def n_outliers(self, n: int) -> int:
        return int(math.ceil(self.outlier_fraction * n - 1e-9)) if self.outlier_fraction > 0 else 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("extra")
        out["principal_point"] = list(self.principal_point)
        return out


def _look_at(center, target) -> np.ndarray:
    z = np.asarray(target, float) - center
    z /= np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0])
    if abs(z @ up) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def _fits(R, C, points, cos_max) -> bool:
    """All points in front of the camera and within the off-axis cone."""
    v = points - C
    depth = v @ R[2]
    return bool(np.all(depth > 0.0) and np.all(depth >= cos_max * np.linalg.norm(v, axis=1)))


def _jittered_look_at(C, points, cfg, rng):
    base = _look_at(C, np.zeros(3))
    cos_max = math.cos(math.radians(cfg.max_off_axis))
    for _ in range(MAX_RESAMPLES):
        ang = rng.uniform(-cfg.orientation_jitter, cfg.orientation_jitter, 3)
        R = Rotation.from_euler("xyz", ang, degrees=True).as_matrix() @ base
        if _fits(R, C, points, cos_max):
            return R
    raise GeometryRetryExhausted("no jittered orientation keeps the scene in view")


def _random_pose(points, cfg, rng, baseline=None):
    """Random centre on the shell and a uniformly random orientation that sees the scene."""
    cos_max = math.cos(math.radians(cfg.max_off_axis))
    for _ in range(MAX_RESAMPLES):
        d = rng.normal(size=3)
        C = cfg.camera_distance * d / np.linalg.norm(d)
        R = Rotation.random(random_state=rng).as_matrix()
        if not _fits(R, C, points, cos_max):
            continue
        if baseline is None:
            return R, C, None
        C2 = C + baseline * R[0]
        if _fits(R, C2, points, cos_max):
            return R, C, C2
    raise GeometryRetryExhausted(
        f"no random orientation satisfied cheirality after {MAX_RESAMPLES} draws"
    )


def _rig(cfg: SyntheticConfig, points, rng):
    """Rotations and centres of ``n_views`` cameras."""
    n = int(cfg.n_views)
    poses = []
    if cfg.distribution == "A":
        half = 0.5 * cfg.camera_distance
        for s in np.linspace(-half, half, n):
            C = np.array([s, -cfg.camera_distance, 0.0])
            poses.append((_jittered_look_at(C, points, cfg, rng), C))
    elif cfg.distribution == "C":
        for a in 2.0 * math.pi * np.arange(n) / n:
            C = cfg.camera_distance * np.array([math.cos(a), math.sin(a), 0.0])
            poses.append((_jittered_look_at(C, points, cfg, rng), C))
    elif cfg.distribution == "B":
        for _ in range(n):
            R, C, _ = _random_pose(points, cfg, rng)
            poses.append((R, C))
    else:
        while len(poses) < n:
            R, C, C2 = _random_pose(points, cfg, rng, baseline=cfg.stereo_baseline)
            poses.append((R, C))
            if len(poses) < n:
                poses.append((R, C2))
    return poses


def generate_instances(config: SyntheticConfig) -> list:
    """One instance per scene point; all share the same cameras."""
    cfg = config
    children = np.random.SeedSequence(int(cfg.rng_seed)).spawn(int(cfg.n_points) + 1)
    scene_rng = np.random.default_rng(children[0])
    half = 0.5 * cfg.scene_scale
    points = scene_rng.uniform(-half, half, size=(int(cfg.n_points), 3))
    poses = _rig(cfg, points, scene_rng)
    K = cfg.K
    cams = tuple(CameraMatrix.from_krt(K, R, -R @ C) for R, C in poses)
    P = np.stack([c.entries for c in cams])
    n = len(cams)
    n_out = cfg.n_outliers(n)
    meta_base = {
        "generator": cfg.to_dict(),
        "defaults_unspecified": list(UNSPECIFIED_DEFAULTS),
        "noiseless": cfg.noise_sigma == 0.0 and n_out == 0,
    }
    meta_base["generator"].update(cfg.extra)

    out = []
    for k, X in enumerate(points):
        rng = np.random.default_rng(children[k + 1])
        xh = np.append(X, 1.0)
        proj = P @ xh
        u = proj[:, :2] / proj[:, 2:3]
        sigma = np.full(n, float(cfg.noise_sigma))
        mask = np.ones(n, dtype=bool)
        if n_out:
            bad = rng.choice(n, size=n_out, replace=False)
            sigma[bad] = cfg.outlier_sigma
            mask[bad] = False
        u = u + rng.normal(size=(n, 2)) * sigma[:, None]
        obs = tuple(Observation(i, (u[i, 0], u[i, 1])) for i in range(n))
        meta = dict(meta_base, point_index=k)
        out.append(TriangulationInstance(cams, obs, ground_truth=X, inlier_mask=tuple(mask),
                                         metadata=meta))
    return out


def true_inlier_mask(instance: TriangulationInstance) -> list:
    """Observations that received the inlier noise level."""
    if instance.inlier_mask is None:
        raise MissingMetadata("instance carries no inlier labels")
    return list(instance.inlier_mask)
