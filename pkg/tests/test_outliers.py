import numpy as np
import pytest

from linftri import (Exhausted, Observation, OutlierConfig, SyntheticConfig, TriangulationInstance,
                     generate_instances, remove_outliers, solve)

from conftest import make_instances

MODES = ("exact", "coreset")


def _one_gross_outlier(seed, bad=7):
    inst = generate_instances(SyntheticConfig("B", n_views=21, noise_sigma=1.0, rng_seed=seed))[0]
    obs = list(inst.observations)
    o = obs[bad]
    obs[bad] = Observation(o.camera_index, np.asarray(o.point2) + (150.0, -120.0))
    return TriangulationInstance(inst.cameras, tuple(obs), ground_truth=inst.ground_truth)


@pytest.mark.parametrize("mode", MODES)
def test_clean_instance_needs_no_rounds(mode):
    inst = make_instances("C", n=30, points=1, sigma=1.0)[0]
    res = remove_outliers(inst, OutlierConfig(10.0, mode=mode))
    assert res.rounds == 0 and res.removed == ()
    assert res.inliers == tuple(range(30))
    assert res.solution.delta == pytest.approx(solve(inst).delta, rel=1e-9)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("seed", range(5))
def test_single_gross_outlier_removed_in_one_round(mode, seed):
    inst = _one_gross_outlier(seed)
    res = remove_outliers(inst, OutlierConfig(10.0, mode=mode))
    assert res.rounds == 1
    assert 7 in res.removed and 7 not in res.inliers
    assert len(res.removed) <= 4
    assert inst.residuals(res.solution.x)[list(res.inliers)].max() <= 10.0


@pytest.mark.parametrize("mode", MODES)
def test_returned_indices_satisfy_threshold(mode):
    for inst in make_instances("B", n=60, points=4, sigma=5.0, seed=3, outlier_fraction=0.1,
                               outlier_sigma=30.0):
        inliers, sol = remove_outliers(inst, OutlierConfig(10.0, mode=mode, rng_seed=1))
        r = inst.residuals(sol.x)
        assert r[list(inliers)].max() <= 10.0 * (1 + 1e-9)
        assert sorted(set(inliers)) == list(inliers)


def test_removal_bookkeeping():
    inst = make_instances("D", n=50, points=1, sigma=5.0, seed=8, outlier_fraction=0.1)[0]
    for mode in MODES:
        res = remove_outliers(inst, OutlierConfig(10.0, mode=mode))
        assert set(res.inliers).isdisjoint(res.removed)
        assert len(res.inliers) + len(res.removed) == inst.n
        if mode == "coreset":
            assert len(res.removed) <= 4 * res.rounds
        assert res.rounds >= 1 and res.solver_seconds > 0


def test_deterministic():
    inst = make_instances("B", n=60, points=1, sigma=5.0, seed=4, outlier_fraction=0.1)[0]
    a = remove_outliers(inst, OutlierConfig(10.0, mode="coreset", rng_seed=3))
    b = remove_outliers(inst, OutlierConfig(10.0, mode="coreset", rng_seed=3))
    assert a.inliers == b.inliers and np.array_equal(a.solution.x, b.solution.x)


@pytest.mark.parametrize("mode", MODES)
def test_unreachable_threshold(mode):
    inst = make_instances("B", n=12, points=1, sigma=30.0, seed=2)[0]
    with pytest.raises(Exhausted):
        remove_outliers(inst, OutlierConfig(1e-6, mode=mode))


def test_config_validation():
    with pytest.raises(ValueError):
        OutlierConfig(0.0)
    with pytest.raises(ValueError):
        OutlierConfig(10.0, mode="ransac")
    with pytest.raises(ValueError):
        OutlierConfig(10.0, mode="coreset", epsilon=0.0)
    assert OutlierConfig(10.0, mode="coreset_top4").mode == "coreset"
