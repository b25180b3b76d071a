"""Acceptance criteria 1-12, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.  The expensive runs
behind criteria 1, 2 and 11 are computed once per session and recomputed
from scratch by criterion 12.
"""

import functools
import math
import time
import warnings

import numpy as np
import pytest

from linftri import (CoresetConfig, OutlierConfig, SolveOptions, SyntheticConfig, backtrack_bound,
                     generate_instances, remove_outliers, run_coreset, solve, true_inlier_mask)
from linftri.harness import ratio_of, reference_delta
from linftri.io import coreset_record, solution_record

from oracle import oracle_delta

SLACK = 1e-6
DINKEL = SolveOptions(method="dinkelbach")


def _report(capsys, n, ok, detail, soft=False):
    tag = "PASS" if ok else ("WARN" if soft else "FAIL")
    with capsys.disabled():
        print(f"\ncriterion {n:>2} {tag}: {detail}")


def _mixed_instances(total, n_list, seed, sigma=10.0):
    """``total`` single-point instances spread over Types A-D and the sizes in ``n_list``."""
    cells = [(t, n) for t in "ABCD" for n in n_list]
    out = []
    for k, (t, n) in enumerate(cells):
        m = total // len(cells) + (k < total % len(cells))
        insts = generate_instances(SyntheticConfig(t, n_views=n, n_points=m, noise_sigma=sigma,
                                                   rng_seed=seed + k))
        out.extend(insts)
    return out


# ---------------------------------------------------------------- shared runs

def _run_criterion1():
    rows = []
    for t in "ABCD":
        insts = generate_instances(SyntheticConfig(t, n_views=100, n_points=50, noise_sigma=10.0,
                                                   rng_seed=1000 + ord(t)))
        for k, inst in enumerate(insts):
            delta_star = reference_delta(inst, DINKEL)
            res = run_coreset(inst, CoresetConfig(0.01, DINKEL, rng_seed=k))
            rows.append((t, k, delta_star, res))
    return rows


def _run_criterion2():
    rows = []
    for k, inst in enumerate(_mixed_instances(100, (20, 100), seed=2000)):
        batch = solve(inst, None, SolveOptions(method="bisection"))
        res = run_coreset(inst, CoresetConfig(0.0, DINKEL, rng_seed=k))
        rows.append((inst, batch, res))
    return rows


def _run_criterion11():
    insts = generate_instances(SyntheticConfig("B", n_views=100, n_points=50, noise_sigma=5.0,
                                               outlier_fraction=0.1, outlier_sigma=30.0, rng_seed=11))
    out = {}
    for mode in ("exact", "coreset"):
        cfg = OutlierConfig(10.0, mode=mode, epsilon=0.4, solver=DINKEL, rng_seed=5)
        out[mode] = [remove_outliers(inst, cfg) for inst in insts]
    return insts, out


criterion1 = functools.lru_cache(maxsize=None)(_run_criterion1)
criterion2 = functools.lru_cache(maxsize=None)(_run_criterion2)
criterion11 = functools.lru_cache(maxsize=None)(_run_criterion11)


# ---------------------------------------------------------------- criteria

def test_criterion_01_coreset_bound(capsys):
    worst_t = worst_final = 0.0
    violations = 0
    for _, _, delta_star, res in criterion1():
        for e in res.trace:
            if e.t_eff >= 2:
                excess = ratio_of(e.incumbent_gamma, delta_star) - backtrack_bound(e.t_eff)
                worst_t = max(worst_t, excess)
                violations += excess > SLACK
        final = ratio_of(res.gamma, delta_star)
        worst_final = max(worst_final, final)
        violations += final > 1.01 + SLACK
    ok = violations == 0
    _report(capsys, 1, ok, f"200 instances, {violations} violations, max ratio-bound excess "
                           f"{worst_t:.2e}, max final ratio {worst_final:.9f}")
    assert ok


def test_criterion_02_global_convergence(capsys):
    worst = 0.0
    bad = 0
    for _, batch, res in criterion2():
        err = abs(res.delta_s - batch.delta) / (1 + batch.delta)
        worst = max(worst, err)
        bad += err > SLACK
    ok = bad == 0
    _report(capsys, 2, ok, f"{len(criterion2())} instances at eps=0, {bad} disagree, "
                           f"max |d_coreset - d_batch|/(1+d) = {worst:.2e}")
    assert ok


def test_criterion_03_solver_cross_agreement(capsys):
    insts = _mixed_instances(200, (10, 50, 100), seed=3000)
    worst = {}
    for p in (1, 2, math.inf):
        w = 0.0
        for inst in insts:
            a = solve(inst, None, SolveOptions(norm_p=p, method="bisection")).delta
            b = solve(inst, None, SolveOptions(norm_p=p, method="dinkelbach")).delta
            w = max(w, abs(a - b) / max(a, 1e-12))
        worst[p] = w
    ok = all(w <= SLACK for w in worst.values())
    _report(capsys, 3, ok, "200 instances, max relative gap " +
            ", ".join(f"p={p}: {w:.2e}" for p, w in worst.items()))
    assert ok


def test_criterion_04_oracle_equivalence(capsys):
    worst = 0.0
    count = 0
    for k in range(50):
        t = "ABCD"[k % 4]
        n = 3 + k % 4
        p = (1, 2, math.inf)[k % 3]
        inst = generate_instances(SyntheticConfig(t, n_views=n, noise_sigma=10.0, rng_seed=4000 + k))[0]
        ref = oracle_delta(inst, p)[1]
        got = solve(inst, None, SolveOptions(norm_p=p)).delta
        worst = max(worst, abs(got - ref) / ref)
        count += 1
    ok = worst <= 1e-5
    _report(capsys, 4, ok, f"{count} instances with N <= 6, max relative gap to grid oracle {worst:.2e}")
    assert ok


def test_criterion_05_trace_monotonicity(capsys):
    runs = [r for *_, r in criterion1()] + [r for *_, r in criterion2()]
    drops = 0
    for res in runs:
        deltas = [res.delta_1] + [e.delta_t for e in res.trace]
        drops += sum(b < a * (1 - 1e-9) for a, b in zip(deltas, deltas[1:]))
    ok = drops == 0
    _report(capsys, 5, ok, f"{len(runs)} recorded runs, {drops} decreases of delta_t")
    assert ok


def test_criterion_06_support_set(capsys):
    sizes = []
    worst = 0.0
    for inst, batch, _ in criterion2():
        if batch.delta <= 1e-9:
            continue
        sizes.append(len(batch.support))
        again = solve(inst, batch.support, SolveOptions(method="bisection")).delta
        worst = max(worst, abs(again - batch.delta) / batch.delta)
    small = sum(s <= 4 for s in sizes) / len(sizes)
    ok = small >= 0.99 and worst <= SLACK
    _report(capsys, 6, ok, f"|support| <= 4 in {100 * small:.1f}% of {len(sizes)} runs, "
                           f"max re-solve gap {worst:.2e}")
    assert ok


EPS_SWEEP = (1.0, 0.5, 0.2, 0.1, 0.05)
SWEEP_N = (100, 500, 1000)


@functools.lru_cache(maxsize=None)
def _size_sweep():
    cells = {}
    for t in "ABCD":
        for n in SWEEP_N:
            insts = generate_instances(SyntheticConfig(t, n_views=n, n_points=20, noise_sigma=10.0,
                                                       rng_seed=7000 + n))
            for eps in EPS_SWEEP:
                runs = [run_coreset(inst, CoresetConfig(eps, DINKEL, rng_seed=k, record_trace=False))
                        for k, inst in enumerate(insts)]
                cells[t, n, eps] = ([len(r.coreset) for r in runs], [r.alpha for r in runs])
    return cells


def test_criterion_07_coreset_size(capsys):
    cells = _size_sweep()
    biggest = max(max(s) for s, _ in cells.values())
    spread = 0.0
    for t in "ABCD":
        for eps in EPS_SWEEP:
            means = [np.mean(cells[t, n, eps][0]) for n in SWEEP_N]
            spread = max(spread, max(means) - min(means))
    ok = biggest <= 12 and spread <= 2
    _report(capsys, 7, ok, f"max coreset size {biggest}, max spread of mean size across N {spread:.2f}")
    assert ok


def test_criterion_08_alpha_stability(capsys):
    cells = _size_sweep()
    gaps = {}
    for t in "ABCD":
        a100 = np.mean([a for eps in EPS_SWEEP for a in cells[t, 100, eps][1]])
        a1000 = np.mean([a for eps in EPS_SWEEP for a in cells[t, 1000, eps][1]])
        gaps[t] = (a100, a1000)
    ok = all(abs(a - b) <= 0.15 for a, b in gaps.values())
    _report(capsys, 8, ok, "alpha(N=100) -> alpha(N=1000): " +
            ", ".join(f"{t} {a:.3f} -> {b:.3f}" for t, (a, b) in gaps.items()), soft=True)
    if not ok:
        warnings.warn("alpha varies with N by more than 0.15 for some camera type")


def test_criterion_09_relative_speedup(capsys):
    ratios = {}
    means = {}
    for n in (100, 500, 2000):
        insts = generate_instances(SyntheticConfig("B", n_views=n, n_points=10, noise_sigma=10.0,
                                                   rng_seed=9000 + n))
        tc = tb = 0.0
        for k, inst in enumerate(insts):
            inst.cone_stack
            x1 = solve(inst, np.random.default_rng(k).permutation(n)[:4], DINKEL).x
            t0 = time.perf_counter()
            run_coreset(inst, CoresetConfig(0.01, DINKEL, rng_seed=k, record_trace=False))
            tc += time.perf_counter() - t0
            t0 = time.perf_counter()
            solve(inst, None, DINKEL, start=x1)
            tb += time.perf_counter() - t0
        means[n] = (tc / len(insts), tb / len(insts))
        ratios[n] = tc / tb
    faster = all(means[n][0] < means[n][1] for n in (500, 2000))
    monotone = ratios[100] >= ratios[500] >= ratios[2000]
    ok = faster and monotone
    _report(capsys, 9, ok, "coreset/batch time " +
            ", ".join(f"N={n}: {1e3 * c:.2f}/{1e3 * b:.2f} ms ({ratios[n]:.3f})"
                      for n, (c, b) in means.items()))
    assert ok


def test_criterion_10_noiseless_exactness(capsys):
    worst_delta = worst_x = 0.0
    runs = 0
    for t in "ABCD":
        for inst in generate_instances(SyntheticConfig(t, n_views=30, n_points=3, noise_sigma=0.0,
                                                       rng_seed=10)):
            scale = 2.0
            for p in (1, 2, math.inf):
                for method in ("bisection", "dinkelbach"):
                    opts = SolveOptions(norm_p=p, method=method)
                    outs = [solve(inst, None, opts)]
                    outs += [run_coreset(inst, CoresetConfig(eps, opts)) for eps in (0.0, 0.01)]
                    outs.append(remove_outliers(inst, OutlierConfig(10.0, "exact", solver=opts)).solution)
                    outs.append(remove_outliers(inst, OutlierConfig(10.0, "coreset", solver=opts)).solution)
                    for o in outs:
                        x = getattr(o, "x_s", getattr(o, "x", None))
                        d = getattr(o, "delta_s", getattr(o, "delta", None))
                        worst_delta = max(worst_delta, d)
                        worst_x = max(worst_x, np.linalg.norm(x - inst.ground_truth) / scale)
                        runs += 1
    ok = worst_delta <= 1e-8 and worst_x <= 1e-6
    _report(capsys, 10, ok, f"{runs} runs over all modes, max delta {worst_delta:.2e}, "
                            f"max |x - X|/scale {worst_x:.2e}")
    assert ok


def test_criterion_11_outlier_removal(capsys):
    insts, out = criterion11()
    kept = {}
    for mode, results in out.items():
        kept[mode] = sum(sum(true_inlier_mask(inst)[i] for i in r.inliers)
                         for inst, r in zip(insts, results))
    worst = max(inst.residuals(r.solution.x)[list(r.inliers)].max()
                for results in out.values() for inst, r in zip(insts, results))
    secs = {mode: sum(r.solver_seconds for r in results) for mode, results in out.items()}
    retained = kept["coreset"] / kept["exact"]
    ok = retained >= 0.95 and worst <= 10.0 and secs["coreset"] < secs["exact"]
    _report(capsys, 11, ok, f"coreset keeps {100 * retained:.1f}% of exact's true inliers, "
                            f"max kept residual {worst:.3f} px, solver time coreset "
                            f"{secs['coreset']:.3f} s vs exact {secs['exact']:.3f} s")
    assert ok


def _strip(rec):
    rec = dict(rec)
    rec.pop("wall_us", None)
    return rec


def _fingerprint1(rows):
    return [(t, k, d, coreset_record(r)) for t, k, d, r in rows]


def _fingerprint2(rows):
    return [(solution_record(b), coreset_record(r)) for _, b, r in rows]


def _fingerprint11(data):
    _, out = data
    return {mode: [(r.inliers, r.removed, r.rounds, solution_record(r.solution)) for r in results]
            for mode, results in out.items()}


def test_criterion_12_determinism(capsys):
    same = {
        1: _fingerprint1(criterion1()) == _fingerprint1(_run_criterion1()),
        2: _fingerprint2(criterion2()) == _fingerprint2(_run_criterion2()),
        11: _fingerprint11(criterion11()) == _fingerprint11(_run_criterion11()),
    }
    ok = all(same.values())
    _report(capsys, 12, ok, "identical reruns: " + ", ".join(f"criterion {k} {v}" for k, v in same.items()))
    assert ok
