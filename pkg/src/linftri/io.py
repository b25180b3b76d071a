"""Instance files, result records and comma-separated run reports.

Instance file layout (one record per line, ``#`` starts a comment)::

    linftri-instance 1
    cameras <K>
    camera <i> <12 numbers, row-major 3x4>        (K lines)
    observations <N>
    obs <camera index> <u> <v>                     (N lines)
    ground_truth <x> <y> <z>                       (optional)
    inlier_mask <N flags 0/1>                      (optional)
    metadata <one-line JSON object>                (optional)
    end

Numbers are written with 17 significant digits so that a save/load round
trip reproduces every value exactly.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import IoError, ParseError
from .geometry import TriangulationInstance, norm_label

FORMAT_NAME = "linftri-instance"
FORMAT_VERSION = 1


def _num(v) -> str:
    return "%.17g" % float(v)


def dumps_instance(instance: TriangulationInstance) -> str:
    lines = [f"{FORMAT_NAME} {FORMAT_VERSION}", f"cameras {len(instance.cameras)}"]
    for i, cam in enumerate(instance.cameras):
        lines.append(f"camera {i} " + " ".join(_num(v) for v in cam.entries.reshape(-1)))
    lines.append(f"observations {instance.n}")
    for o in instance.observations:
        lines.append(f"obs {o.camera_index} {_num(o.point2[0])} {_num(o.point2[1])}")
    if instance.ground_truth is not None:
        lines.append("ground_truth " + " ".join(_num(v) for v in instance.ground_truth))
    if instance.inlier_mask is not None:
        lines.append("inlier_mask " + " ".join("1" if v else "0" for v in instance.inlier_mask))
    if instance.metadata:
        lines.append("metadata " + json.dumps(instance.metadata, sort_keys=True, separators=(",", ":")))
    lines.append("end")
    return "\n".join(lines) + "\n"


def _floats(tokens, lineno, what):
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"{what}: {exc}", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError(f"{what}: non-finite value", lineno)
    return vals


def _int(token, lineno, what):
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{what}: expected an integer, got {token!r}", lineno) from None


def loads_instance(text: str) -> TriangulationInstance:
    """Parse an instance document; errors name the line and the record."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line))
    if not rows:
        raise ParseError("empty document", 1)
    it = iter(rows)

    lineno, line = next(it)
    head = line.split()
    if len(head) != 2 or head[0] != FORMAT_NAME:
        raise ParseError(f"expected header '{FORMAT_NAME} <version>'", lineno)
    if _int(head[1], lineno, "format version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {head[1]}", lineno)

    def expect(key):
        try:
            ln, ln_text = next(it)
        except StopIteration:
            raise ParseError(f"unexpected end of document, expected '{key}'", rows[-1][0]) from None
        tok = ln_text.split(None, 1)
        if tok[0] != key:
            raise ParseError(f"expected '{key}', got '{tok[0]}'", ln)
        return ln, tok[1] if len(tok) > 1 else ""

    ln, rest = expect("cameras")
    n_cams = _int(rest.strip(), ln, "camera count")
    cams = []
    for k in range(n_cams):
        ln, rest = expect("camera")
        tok = rest.split()
        if not tok or _int(tok[0], ln, f"camera {k}") != k:
            raise ParseError(f"camera {k}: records must be numbered in order", ln)
        vals = _floats(tok[1:], ln, f"camera {k}")
        if len(vals) != 12:
            raise ParseError(f"camera {k}: expected 12 numbers, got {len(vals)}", ln)
        cams.append(np.array(vals).reshape(3, 4))

    ln, rest = expect("observations")
    n_obs = _int(rest.strip(), ln, "observation count")
    obs = []
    for k in range(n_obs):
        ln, rest = expect("obs")
        tok = rest.split()
        if len(tok) != 3:
            raise ParseError(f"observation {k}: expected camera index and 2 numbers", ln)
        ci = _int(tok[0], ln, f"observation {k}")
        if not 0 <= ci < n_cams:
            raise ParseError(f"observation {k}: camera index out of range ({ci} of {n_cams})", ln)
        u = _floats(tok[1:], ln, f"observation {k}")
        obs.append((ci, u[0], u[1]))

    gt = mask = None
    meta = {}
    while True:
        try:
            ln, line = next(it)
        except StopIteration:
            raise ParseError("missing 'end' record", rows[-1][0]) from None
        key, _, rest = line.partition(" ")
        if key == "end":
            break
        if key == "ground_truth":
            gt = _floats(rest.split(), ln, "ground_truth")
            if len(gt) != 3:
                raise ParseError(f"ground_truth: expected 3 numbers, got {len(gt)}", ln)
        elif key == "inlier_mask":
            tok = rest.split()
            if len(tok) != n_obs or any(t not in ("0", "1") for t in tok):
                raise ParseError(f"inlier_mask: expected {n_obs} flags 0/1", ln)
            mask = [t == "1" for t in tok]
        elif key == "metadata":
            try:
                meta = json.loads(rest)
            except json.JSONDecodeError as exc:
                raise ParseError(f"metadata: {exc.msg}", ln) from None
            if not isinstance(meta, dict):
                raise ParseError("metadata: expected a JSON object", ln)
        else:
            raise ParseError(f"unknown record '{key}'", ln)
    for ln, _ in it:
        raise ParseError("content after 'end'", ln)

    try:
        return TriangulationInstance(tuple(cams), tuple(obs), ground_truth=gt, inlier_mask=mask,
                                     metadata=meta)
    except ValueError as exc:
        raise ParseError(str(exc), None) from None


def save_instance(instance: TriangulationInstance, path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_instance(instance))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def load_instance(path) -> TriangulationInstance:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return loads_instance(text)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- result records

def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def solution_record(sol) -> dict:
    return _jsonable({
        "x": sol.x, "delta": sol.delta, "support": sol.support, "solver_iters": sol.solver_iters,
        "method": sol.method, "norm": norm_label(sol.norm_p), "n_subset": len(sol.subset),
    })


def coreset_record(res) -> dict:
    trace = [{f.name: getattr(e, f.name) for f in fields(e)} for e in res.trace]
    return _jsonable({
        "coreset": res.coreset, "x": res.x_s, "delta": res.delta_s, "gamma": res.gamma,
        "global": res.global_flag, "V": res.V, "alpha": res.alpha,
        "loop_traversals": res.loop_traversals, "t_final": res.t_final, "delta_1": res.delta_1,
        "initial_subset": res.initial_subset, "inserted": res.inserted,
        "fallbacks": res.fallbacks, "trace": trace,
    })


def dump_json(record: dict, path) -> None:
    text = json.dumps(_jsonable(record), indent=2, sort_keys=True) + "\n"
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------- run reports

REPORT_COLUMNS = ("instance", "N", "mode", "solver", "norm", "epsilon", "t", "delta", "ratio",
                  "bound", "coreset_size", "V", "alpha", "global", "loop_traversals", "wall_us")


@dataclass(frozen=True)
class ReportRow:
    """One report line.

    ``t`` is the effective counter of a bound-validation row (empty for final
    results); ``bound`` is ``1 + 2/t`` there and the ``1 + epsilon`` target
    for coreset results.  ``wall_us`` covers solver calls only.
    """

    instance: str
    N: int
    mode: str
    solver: str
    norm: str
    epsilon: float | None
    t: int | None
    delta: float
    ratio: float | None
    bound: float | None
    coreset_size: int | None
    V: int | None
    alpha: float | None
    global_flag: bool | None
    loop_traversals: int | None
    wall_us: int | None

    def cells(self) -> list:
        vals = [self.instance, self.N, self.mode, self.solver, self.norm, self.epsilon, self.t,
                self.delta, self.ratio, self.bound, self.coreset_size, self.V, self.alpha,
                self.global_flag, self.loop_traversals, self.wall_us]
        out = []
        for v in vals:
            if v is None:
                out.append("")
            elif isinstance(v, bool):
                out.append("1" if v else "0")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


def row_from_coreset(name, instance, res, opts, epsilon, delta_star=None, wall_us=None,
                     t=None, ratio=None, bound=None) -> ReportRow:
    if ratio is None and delta_star is not None:
        ratio = res.gamma / delta_star if delta_star > 1e-9 else 1.0
    if bound is None and t is None:
        bound = 1.0 + float(epsilon)
    return ReportRow(name, instance.n, "coreset", opts.method, norm_label(opts.norm_p),
                     float(epsilon), t, float(res.delta_s), ratio, bound, len(res.coreset), res.V,
                     float(res.alpha), bool(res.global_flag), res.loop_traversals, wall_us)


def row_from_batch(name, instance, sol, wall_us=None) -> ReportRow:
    return ReportRow(name, instance.n, "batch", sol.method, norm_label(sol.norm_p), None, None,
                     float(sol.delta), 1.0, None, None, None, None, None, None, wall_us)


def audit_row(row: ReportRow, result) -> None:
    """Check a row against the in-memory result it summarises (raises ``AssertionError``)."""
    if row.mode == "coreset":
        checks = [
            (row.coreset_size == len(result.coreset), "coreset_size"),
            (row.V == result.V, "V"),
            (row.loop_traversals == result.loop_traversals, "loop_traversals"),
            (row.global_flag == bool(result.global_flag), "global"),
            (row.delta == float(result.delta_s), "delta"),
            (row.alpha == (result.V / result.loop_traversals if result.loop_traversals else 0.0), "alpha"),
        ]
    else:
        checks = [(row.delta == float(result.delta), "delta")]
    if row.N < 1:
        checks.append((False, "N"))
    if row.t is not None:
        checks.append((row.t >= 2 and row.bound == 1.0 + 2.0 / row.t, "bound"))
    bad = [name for ok, name in checks if not ok]
    if bad:
        raise AssertionError(f"report row for {row.instance} disagrees with its result: {bad}")


def format_report(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def write_report(rows, path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(format_report(rows))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_report(path) -> list:
    """Rows of a report as dicts keyed by column name."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
                raise ParseError(f"{path}: unexpected report columns {reader.fieldnames}")
            return list(reader)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
