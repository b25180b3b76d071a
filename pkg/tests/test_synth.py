import math

import numpy as np
import pytest

from linftri import (GeometryRetryExhausted, MissingMetadata, SyntheticConfig, TriangulationInstance,
                     generate_instances, true_inlier_mask)

from conftest import make_instances


def _centres(inst):
    out = []
    for cam in inst.cameras:
        P = cam.entries
        out.append(-np.linalg.solve(P[:, :3], P[:, 3]))
    return np.array(out)


@pytest.mark.parametrize("dist", "ABCD")
def test_noiseless_residuals_vanish(dist):
    for inst in make_instances(dist, n=30, points=4, sigma=0.0):
        assert inst.metadata["noiseless"]
        for p in (1, 2, math.inf):
            assert inst.residuals(inst.ground_truth, p).max() < 1e-9


@pytest.mark.parametrize("dist", "ABCD")
def test_ground_truth_in_front_of_every_camera(dist):
    for inst in make_instances(dist, n=60, points=10, seed=3):
        assert np.all(inst.cone_stack.depths(inst.ground_truth) > 0)


def test_type_a_centres_collinear():
    C = _centres(make_instances("A", n=50, points=1)[0])
    d = C - C[0]
    direction = d[-1] / np.linalg.norm(d[-1])
    off = d - np.outer(d @ direction, direction)
    assert np.abs(off).max() <= 1e-9


def test_type_c_centres_on_circle():
    C = _centres(make_instances("C", n=40, points=1)[0])
    assert np.allclose(np.linalg.norm(C, axis=1), 10.0, atol=1e-9)
    assert np.abs(C[:, 2]).max() <= 1e-9


def test_type_d_stereo_pairs():
    cfg = SyntheticConfig("D", n_views=40, stereo_baseline=0.5)
    inst = generate_instances(cfg)[0]
    C = _centres(inst)
    gaps = np.linalg.norm(C[1::2] - C[0::2], axis=1)
    assert np.allclose(gaps, 0.5, atol=1e-9)
    for a, b in zip(inst.cameras[0::2], inst.cameras[1::2]):
        assert np.allclose(a.entries[:, :3], b.entries[:, :3])


def test_noise_level_statistics():
    inst = make_instances("B", n=1000, points=1, sigma=10.0, seed=11)[0]
    noiseless = make_instances("B", n=1000, points=1, sigma=0.0, seed=11)[0]
    e = np.array([o.point2 for o in inst.observations]) - np.array([o.point2 for o in noiseless.observations])
    for axis in range(2):
        assert 9.3 <= e[:, axis].std(ddof=1) <= 10.7


def test_outlier_mask_counts():
    inst = make_instances("B", n=100, points=1, sigma=5.0, outlier_fraction=0.1, outlier_sigma=30.0)[0]
    mask = true_inlier_mask(inst)
    assert sum(mask) == 90
    assert all(true_inlier_mask(make_instances("B", n=100, points=1)[0]))


def test_deterministic_per_seed():
    kw = dict(n=50, points=3, outlier_fraction=0.2, seed=42)
    a = make_instances("D", **kw)
    b = make_instances("D", **kw)
    for x, y in zip(a, b):
        assert x.inlier_mask == y.inlier_mask
        assert np.array_equal(x.ground_truth, y.ground_truth)
        assert all(np.array_equal(p.entries, q.entries) for p, q in zip(x.cameras, y.cameras))
        assert [o.point2 for o in x.observations] == [o.point2 for o in y.observations]
    c = make_instances("D", **dict(kw, seed=43))
    assert a[0].inlier_mask != c[0].inlier_mask


def test_metadata_labels_defaults():
    meta = make_instances("A", n=10, points=1)[0].metadata
    assert meta["generator"]["focal"] == 1000.0
    assert "focal" in meta["defaults_unspecified"]


def test_geometry_retry_exhausted():
    with pytest.raises(GeometryRetryExhausted):
        generate_instances(SyntheticConfig("B", n_views=5, scene_scale=50.0, max_off_axis=1.0))


def test_missing_labels():
    inst = make_instances("B", n=10, points=1)[0]
    bare = TriangulationInstance(inst.cameras, inst.observations)
    with pytest.raises(MissingMetadata):
        true_inlier_mask(bare)


@pytest.mark.parametrize("kw", [dict(distribution="E"), dict(n_views=1), dict(noise_sigma=-1.0),
                                dict(outlier_fraction=1.0), dict(focal=0.0),
                                dict(distribution="D", stereo_baseline=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SyntheticConfig(**kw)
