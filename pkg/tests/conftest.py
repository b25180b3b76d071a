import math
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from linftri import CameraMatrix, Observation, SyntheticConfig, TriangulationInstance, generate_instances

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

I34 = np.hstack([np.eye(3), np.zeros((3, 1))])
SHIFTED = np.hstack([np.eye(3), np.array([[-1.0], [0.0], [0.0]])])

NORMS = (1, 2, math.inf)


@pytest.fixture
def identity_camera():
    return CameraMatrix(I34)


@pytest.fixture
def two_view():
    """Noiseless pair: [I|0] and [I|(-1,0,0)] observing (0, 0, 5)."""
    cams = (CameraMatrix(I34), CameraMatrix(SHIFTED))
    obs = (Observation(0, (0.0, 0.0)), Observation(1, (-0.2, 0.0)))
    return TriangulationInstance(cams, obs, ground_truth=(0.0, 0.0, 5.0))


def make_instances(dist="B", n=20, points=5, sigma=10.0, seed=0, **kw):
    return generate_instances(SyntheticConfig(dist, n_views=n, n_points=points, noise_sigma=sigma,
                                              rng_seed=seed, **kw))


@pytest.fixture(params=["compiled", "python"])
def backend(request):
    from linftri.inner import available_backends
    if request.param not in available_backends():
        pytest.skip("compiled kernel not built")
    return request.param
