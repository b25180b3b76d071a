"""Command line: ``linftri {generate,solve,validate-bound,bench,remove-outliers}``.

Exit status: 0 success, 1 validation failure (bound violated), 2 input error,
3 solver failure.  ``LINFTRI_SEED`` sets the default ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .coreset import CoresetConfig, run_coreset
from .errors import IoError, LinfTriError, ParseError
from .geometry import norm_label
from .io import (coreset_record, dump_json, load_instance, row_from_batch, row_from_coreset,
                 save_instance, solution_record, write_report)
from .outliers import OutlierConfig, remove_outliers
from .solvers import SolveOptions, solve
from .synth import SyntheticConfig, generate_instances

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("linftri")


class InputError(Exception):
    """Bad flag values or missing inputs."""


def _default_seed() -> int:
    raw = os.environ.get("LINFTRI_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"LINFTRI_SEED must be an integer, got {raw!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _solver_opts(args) -> SolveOptions:
    try:
        return SolveOptions(norm_p=args.norm, method=args.solver)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _instance_files(directory) -> list:
    files = sorted(p for p in Path(directory).glob("*.txt"))
    if not files:
        raise InputError(f"no instance files (*.txt) in {directory}")
    return files


def cmd_generate(args) -> int:
    try:
        cfg = SyntheticConfig(args.type, n_views=args.views, n_points=args.points,
                              noise_sigma=args.noise, outlier_fraction=args.outlier_fraction,
                              outlier_sigma=args.outlier_noise, rng_seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    insts = generate_instances(cfg)
    names = []
    for k, inst in enumerate(insts):
        name = f"instance_{k:04d}.txt"
        save_instance(inst, out / name)
        names.append(name)
    manifest = {"generator": cfg.to_dict(), "files": names,
                "noiseless": bool(insts[0].metadata.get("noiseless", False)),
                "n_observations": insts[0].n}
    dump_json(manifest, out / "manifest.json")
    print(f"wrote {len(names)} instances to {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = load_instance(args.input)
    opts = _solver_opts(args)
    perm = np.random.default_rng(args.seed).permutation(inst.n)
    initial = [int(i) for i in perm[:4]]
    record = {"input": str(args.input), "mode": args.mode, "solver": opts.method,
              "norm": norm_label(opts.norm_p), "seed": args.seed, "N": inst.n,
              "initial_subset": initial}
    if args.mode == "batch":
        # the same initial estimate a coreset run with this seed would start from
        t0 = time.perf_counter()
        x1 = solve(inst, initial, opts).x
        sol = solve(inst, None, opts, start=x1)
        record["wall_us"] = harness._us(time.perf_counter() - t0)
        record["solution"] = solution_record(sol)
        record["delta"] = sol.delta
    else:
        try:
            cfg = CoresetConfig(epsilon=args.epsilon, solver=opts, rng_seed=args.seed)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        t0 = time.perf_counter()
        res = run_coreset(inst, cfg)
        record["wall_us"] = harness._us(time.perf_counter() - t0)
        record["epsilon"] = cfg.epsilon
        record["result"] = coreset_record(res)
        record["delta"] = res.delta_s
        if args.reference:
            ref = harness.reference_delta(inst, opts)
            record["reference_delta"] = ref
            record["ratio"] = harness.ratio_of(res.gamma, ref)
    dump_json(record, args.out)
    print(f"delta = {record['delta']!r}" + (f", ratio = {record['ratio']!r}" if "ratio" in record else ""))
    return EXIT_OK


def cmd_validate_bound(args) -> int:
    opts = _solver_opts(args)
    rows = []
    violations = 0
    alpha = {}
    for k, path in enumerate(_instance_files(args.instances)):
        inst = load_instance(path)
        chk = harness.validate_bound(inst, path.stem, args.epsilon, args.seed + k, opts)
        rows.extend(chk.rows)
        violations += chk.violations
        dist = inst.metadata.get("generator", {}).get("distribution", "?")
        alpha.setdefault(dist, []).append(chk.result.alpha)
    write_report(rows, args.out)
    for dist in sorted(alpha):
        print(f"type {dist}: mean alpha {np.mean(alpha[dist]):.4f} over {len(alpha[dist])} instances")
    print(f"{violations} bound violation(s) in {len(rows)} rows")
    return EXIT_VALIDATION if violations else EXIT_OK


def cmd_bench(args) -> int:
    opts = _solver_opts(args)
    types = [t.strip().upper() for t in args.types.split(",") if t.strip()]
    try:
        cells = harness.bench(types, args.views_list, args.points, args.epsilon_list, opts,
                              seed=args.seed, noise=args.noise, sample_fraction=args.sample_fraction)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(harness.BENCH_COLUMNS)
            w.writerows(harness.bench_table(cells))
    except OSError as exc:
        raise IoError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    print(f"wrote {len(cells)} cells to {args.out}")
    return EXIT_OK


def cmd_remove_outliers(args) -> int:
    inst = load_instance(args.input)
    opts = _solver_opts(args)
    try:
        cfg = OutlierConfig(inlier_threshold=args.threshold, mode=args.mode, epsilon=args.epsilon,
                            solver=opts, rng_seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res = remove_outliers(inst, cfg)
    record = {"input": str(args.input), "mode": cfg.mode, "threshold": cfg.inlier_threshold,
              "epsilon": cfg.epsilon, "seed": args.seed, "N": inst.n, "inliers": res.inliers,
              "removed": res.removed, "rounds": res.rounds,
              "solution": solution_record(res.solution),
              "wall_us": harness._us(res.solver_seconds)}
    if inst.inlier_mask is not None:
        record.update(harness.retention(inst, res.inliers))
    dump_json(record, args.out)
    print(f"kept {len(res.inliers)} of {inst.n} after {res.rounds} round(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    seed = _default_seed()
    ap = argparse.ArgumentParser(prog="linftri", description="Min-max multi-view triangulation.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver_flags(p, epsilon=None):
        p.add_argument("--solver", choices=("bisection", "dinkelbach"), default="dinkelbach")
        p.add_argument("--norm", choices=("1", "2", "inf"), default="2")
        p.add_argument("--seed", type=int, default=seed)
        if epsilon is not None:
            p.add_argument("--epsilon", type=float, default=epsilon)

    g = sub.add_parser("generate", help="write synthetic instances and a manifest")
    g.add_argument("--type", choices=("A", "B", "C", "D"), default="B")
    g.add_argument("--views", type=int, default=100)
    g.add_argument("--points", type=int, default=200)
    g.add_argument("--noise", type=float, default=10.0)
    g.add_argument("--outlier-fraction", type=float, default=0.0)
    g.add_argument("--outlier-noise", type=float, default=30.0)
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve one instance (batch or coreset)")
    s.add_argument("--input", required=True)
    s.add_argument("--mode", choices=("coreset", "batch"), default="coreset")
    solver_flags(s, epsilon=0.01)
    s.add_argument("--no-reference", dest="reference", action="store_false",
                   help="skip the batch reference run used for the reported ratio")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate-bound", help="check incumbent ratios against 1 + 2/t")
    v.add_argument("--instances", required=True)
    solver_flags(v, epsilon=0.01)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_validate_bound)

    b = sub.add_parser("bench", help="coreset vs batch timing and coreset sizes")
    b.add_argument("--types", default="A,B,C,D")
    b.add_argument("--views-list", type=_int_list, default=[100, 500, 1000])
    b.add_argument("--points", type=int, default=20)
    b.add_argument("--epsilon-list", type=_float_list, default=[1.0, 0.5, 0.2, 0.1, 0.05])
    b.add_argument("--noise", type=float, default=10.0)
    b.add_argument("--sample-fraction", type=float, default=1.0,
                   help="fraction of the scene points to solve (seeded subsample)")
    solver_flags(b)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("remove-outliers", help="recursive removal down to a residual threshold")
    r.add_argument("--input", required=True)
    r.add_argument("--threshold", type=float, default=10.0)
    r.add_argument("--mode", choices=("exact", "coreset"), default="exact")
    solver_flags(r, epsilon=0.4)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_remove_outliers)
    return ap


def _error_record(exc, status, out=None) -> None:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_status": status}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    if out:
        try:
            dump_json(rec, out)
        except IoError:
            pass


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except InputError as exc:
        _error_record(exc, EXIT_INPUT)
        return EXIT_INPUT
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = getattr(args, "out", None)
    try:
        return args.func(args)
    except (InputError, ParseError, IoError) as exc:
        _error_record(exc, EXIT_INPUT, None if isinstance(exc, IoError) else out)
        return EXIT_INPUT
    except LinfTriError as exc:
        _error_record(exc, EXIT_SOLVER, out)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
