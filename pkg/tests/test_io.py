import math

import numpy as np
import pytest

from linftri import (CoresetConfig, IoError, ParseError, run_coreset, solve)
from linftri.io import (REPORT_COLUMNS, audit_row, coreset_record, dumps_instance, format_report,
                        load_instance, loads_instance, read_report, row_from_batch, row_from_coreset,
                        save_instance, solution_record, write_report)
from linftri.solvers import SolveOptions

from conftest import make_instances


def test_round_trip_bit_identical(tmp_path):
    inst = make_instances("B", n=25, points=1, seed=6, outlier_fraction=0.2)[0]
    path = tmp_path / "a.txt"
    save_instance(inst, path)
    back = load_instance(path)
    x = inst.ground_truth + 0.123
    for p in (1, 2, math.inf):
        assert np.array_equal(back.residuals(x, p), inst.residuals(x, p))
    assert back.inlier_mask == inst.inlier_mask
    assert np.array_equal(back.ground_truth, inst.ground_truth)
    assert back.metadata == inst.metadata
    assert dumps_instance(back) == path.read_text()


def test_round_trip_without_optional_records(two_view):
    from linftri import TriangulationInstance
    bare = TriangulationInstance(two_view.cameras, two_view.observations)
    back = loads_instance(dumps_instance(bare))
    assert back.ground_truth is None and back.inlier_mask is None
    assert dumps_instance(back) == dumps_instance(bare)


def _doc(two_view):
    return dumps_instance(two_view).splitlines()


def test_short_camera_row_names_camera(two_view):
    lines = _doc(two_view)
    k = next(i for i, l in enumerate(lines) if l.startswith("camera 1 "))
    lines[k] = " ".join(lines[k].split()[:-1])
    with pytest.raises(ParseError, match="camera 1: expected 12 numbers, got 11") as ei:
        loads_instance("\n".join(lines))
    assert ei.value.line == k + 1


def test_camera_index_out_of_range():
    inst = make_instances("B", n=10, points=1)[0]
    lines = dumps_instance(inst).splitlines()
    k = next(i for i, l in enumerate(lines) if l.startswith("obs "))
    tok = lines[k].split()
    tok[1] = "99"
    lines[k] = " ".join(tok)
    with pytest.raises(ParseError, match=r"index out of range \(99 of 10\)"):
        loads_instance("\n".join(lines))


@pytest.mark.parametrize("mutate,message", [
    (lambda ls: ["linftri-instance 2"] + ls[1:], "unsupported format version"),
    (lambda ls: ["hello"] + ls[1:], "expected header"),
    (lambda ls: ls[:-1], "missing 'end'"),
    (lambda ls: ls + ["camera 0"], "content after 'end'"),
    (lambda ls: [l.rsplit(" ", 1)[0] + " nan" if l.startswith("obs 1 ") else l for l in ls],
     "non-finite"),
    (lambda ls: ls[:-1] + ["bogus 1", "end"], "unknown record"),
    (lambda ls: ls[:-1] + ["metadata [1]", "end"], "JSON object"),
])
def test_malformed_documents(two_view, mutate, message):
    with pytest.raises(ParseError, match=message):
        loads_instance("\n".join(mutate(_doc(two_view))))


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_instance(tmp_path / "nope.txt")
    with pytest.raises(IoError):
        save_instance(make_instances(n=5, points=1)[0], tmp_path / "no" / "dir.txt")


def test_records_are_json_safe():
    import json
    inst = make_instances("C", n=30, points=1, seed=1)[0]
    res = run_coreset(inst, CoresetConfig(0.1))
    rec = coreset_record(res)
    json.dumps(rec, allow_nan=False)
    assert rec["V"] == res.V and len(rec["trace"]) == len(res.trace)
    json.dumps(solution_record(solve(inst)), allow_nan=False)


def test_report_rows_audit_and_round_trip(tmp_path):
    inst = make_instances("A", n=40, points=1, seed=2)[0]
    opts = SolveOptions()
    res = run_coreset(inst, CoresetConfig(0.2, opts))
    sol = solve(inst)
    rows = [row_from_coreset("i0", inst, res, opts, 0.2, delta_star=sol.delta, wall_us=17),
            row_from_batch("i0", inst, sol, wall_us=40)]
    audit_row(rows[0], res)
    audit_row(rows[1], sol)
    path = tmp_path / "r.csv"
    write_report(rows, path)
    back = read_report(path)
    assert len(back) == 2 and tuple(back[0]) == REPORT_COLUMNS
    assert float(back[0]["delta"]) == res.delta_s
    assert back[1]["mode"] == "batch" and back[1]["epsilon"] == ""
    assert format_report(rows) == path.read_text()


def test_audit_rejects_inconsistent_row():
    import dataclasses
    inst = make_instances("A", n=40, points=1, seed=2)[0]
    res = run_coreset(inst, CoresetConfig(0.2))
    row = row_from_coreset("i0", inst, res, SolveOptions(), 0.2)
    with pytest.raises(AssertionError, match="V"):
        audit_row(dataclasses.replace(row, V=row.V + 1), res)
    with pytest.raises(AssertionError, match="bound"):
        audit_row(dataclasses.replace(row, t=4, bound=2.0), res)


def test_read_report_rejects_foreign_csv(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        read_report(p)
