import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from linftri import (CameraMatrix, CheiralityViolation, DegenerateGeometry, Observation,
                     TriangulationInstance, displacement_k, linear_initial_estimate, obtuse_test,
                     project, residual, solve, to_cone_form)
from linftri.geometry import normalize_norm

from conftest import I34, SHIFTED, make_instances


def test_project_identity_on_axis(identity_camera):
    assert np.allclose(project(identity_camera, (0, 0, 1)), (0, 0))


def test_project_homogeneous_division(identity_camera):
    assert np.allclose(project(identity_camera, (2, -4, 2)), (1, -2))


def test_project_translated_camera():
    assert np.allclose(project(CameraMatrix(SHIFTED), (0, 0, 5)), (-0.2, 0.0), atol=0, rtol=1e-15)


def test_project_behind_camera_raises(identity_camera):
    with pytest.raises(CheiralityViolation):
        project(identity_camera, (0, 0, -1))
    with pytest.raises(CheiralityViolation):
        residual(identity_camera, Observation(0, (0, 0)), (1, 0, 0))


@pytest.mark.parametrize("p,expected", [(2, 5.0), (math.inf, 4.0), (1, 7.0), ("inf", 4.0)])
def test_residual_norms(identity_camera, p, expected):
    assert residual(identity_camera, Observation(0, (3, 4)), (0, 0, 1), p) == pytest.approx(expected)


def test_cone_form_direct_substitution(identity_camera):
    cf = to_cone_form(identity_camera, Observation(0, (3, 4)))
    assert np.array_equal(cf.A, [[-1, 0, 3], [0, -1, 4]])
    assert np.array_equal(cf.b, [0, 0])
    assert np.array_equal(cf.c, [0, 0, 1])
    assert cf.d == 0
    x = (0, 0, 1)
    assert cf.numerator(x) == pytest.approx(5.0)
    assert cf.denominator(x) == 1.0
    assert cf.ratio(x) == pytest.approx(5.0)


def test_noiseless_residuals_vanish():
    for inst in make_instances("C", n=12, points=3, sigma=0.0):
        for p in (1, 2, math.inf):
            assert np.max(inst.residuals(inst.ground_truth, p)) < 1e-9


def _random_camera(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    K = np.array([[rng.uniform(200, 2000), 0, rng.uniform(0, 800)],
                  [0, rng.uniform(200, 2000), rng.uniform(0, 600)], [0, 0, 1]])
    return CameraMatrix.from_krt(K, Q, rng.normal(size=3) * 5)


def test_cone_form_round_trip_random_draws():
    """Cone ratio and direct projection agree on 10^4 random draws."""
    rng = np.random.default_rng(7)
    worst = 0.0
    count = 0
    while count < 10_000:
        cam = _random_camera(rng)
        x = rng.normal(size=3) * 10
        if cam.depth(x) <= 1e-3:
            continue
        obs = Observation(0, rng.uniform(-500, 1500, size=2))
        p = (1, 2, math.inf)[count % 3]
        direct = float(np.linalg.norm(np.asarray(obs.point2) - project(cam, x), ord=normalize_norm(p)))
        r = residual(cam, obs, x, p)
        worst = max(worst, abs(r - direct) / (1.0 + direct))
        count += 1
    assert worst <= 1e-12


finite = st.floats(-50, 50, allow_nan=False)


@given(st.tuples(finite, finite), st.tuples(finite, finite, st.floats(0.1, 50)))
def test_norm_ordering(u, x):
    cam = CameraMatrix(I34)
    obs = Observation(0, u)
    r_inf = residual(cam, obs, x, math.inf)
    r_2 = residual(cam, obs, x, 2)
    r_1 = residual(cam, obs, x, 1)
    assert r_inf <= r_2 * (1 + 1e-12) + 1e-12
    assert r_2 <= r_1 * (1 + 1e-12) + 1e-12


def test_displacement_examples(identity_camera):
    assert displacement_k(identity_camera, (0.3, 0.1, 2), (0.3, 0.1, 2)) == 0.0
    assert displacement_k(identity_camera, (1, 0, 1), (0, 0, 1)) == pytest.approx(1.0)
    assert displacement_k(identity_camera, (0, 0, 2), (0, 0, 1)) == 0.0


@given(st.tuples(finite, finite, st.floats(0.1, 50)), st.tuples(finite, finite, st.floats(0.1, 50)))
def test_displacement_symmetric_and_zero_iff_same_projection(a, b):
    cam = CameraMatrix(I34)
    k = displacement_k(cam, a, b)
    assert k == displacement_k(cam, b, a)
    same = np.allclose(project(cam, a), project(cam, b), rtol=0, atol=0)
    assert (k == 0.0) == same


def test_obtuse_examples(identity_camera):
    obs = Observation(0, (1, 0))
    xs = (0, 0, 1)
    assert obtuse_test(identity_camera, obs, xs, xs, 1.0) is False
    assert obtuse_test(identity_camera, obs, xs, (-1, 0, 1), 1.0) is True
    assert obtuse_test(identity_camera, obs, xs, (0.5, 0, 1), 1.0) is False


@given(st.floats(0.01, 0.99), st.tuples(finite, finite), st.tuples(finite, finite), st.floats(0.5, 20))
def test_obtuse_false_between_estimate_and_observation(s, u, f_star, depth):
    """Moving the projection toward the observation never passes the test."""
    cam = CameraMatrix(I34)
    u = np.asarray(u)
    f_star = np.asarray(f_star)
    if np.linalg.norm(u - f_star) < 1e-6:
        return
    f = f_star + s * (u - f_star)
    x_star = np.append(f_star * depth, depth)
    x = np.append(f * depth, depth)
    obs = Observation(0, u)
    assert not obtuse_test(cam, obs, x_star, x, residual(cam, obs, x_star))


def test_linear_estimate_two_view(two_view):
    assert np.allclose(linear_initial_estimate(two_view), (0, 0, 5), atol=1e-9)


def test_linear_estimate_single_camera(two_view):
    with pytest.raises(DegenerateGeometry):
        linear_initial_estimate(two_view, [0])
    same = TriangulationInstance(two_view.cameras, (Observation(0, (0, 0)), Observation(0, (0, 0))))
    with pytest.raises(DegenerateGeometry):
        linear_initial_estimate(same)


def test_linear_estimate_start_reaches_ground_truth_start_optimum():
    for inst in make_instances("B", n=30, points=3, seed=4):
        a = solve(inst, start=linear_initial_estimate(inst)).delta
        b = solve(inst, start=inst.ground_truth).delta
        assert abs(a - b) <= 1e-8 * (1 + b)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraMatrix(np.ones((3, 3)))
    with pytest.raises(ValueError):
        CameraMatrix(np.vstack([np.ones((2, 4)), np.zeros((1, 4))]))
    bad = I34.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        CameraMatrix(bad)


def test_instance_validation(two_view):
    with pytest.raises(ValueError):
        TriangulationInstance(two_view.cameras, ((5, 0.0, 0.0),))
    with pytest.raises(ValueError):
        TriangulationInstance(two_view.cameras, ())
    with pytest.raises(ValueError):
        TriangulationInstance(two_view.cameras, two_view.observations, ground_truth=(0, 0, -5))
    with pytest.raises(ValueError):
        Observation(0, (np.inf, 0))


def test_cone_stack_matches_scalar_residuals():
    inst = make_instances("D", n=15, points=1, seed=2)[0]
    x = inst.ground_truth + 0.01
    for p in (1, 2, math.inf):
        scalar = [residual(inst.camera_of(i), inst.observations[i], x, p) for i in range(inst.n)]
        assert np.allclose(inst.residuals(x, p), scalar, rtol=1e-13, atol=0)


def test_subset_shares_cone_data():
    inst = make_instances("B", n=10, points=1)[0]
    sub = inst.subset([3, 1, 7])
    x = inst.ground_truth
    assert np.array_equal(sub.residuals(x), inst.residuals(x)[[3, 1, 7]])
    assert sub.inlier_mask == tuple(inst.inlier_mask[i] for i in (3, 1, 7))
