import io
import json

import numpy as np
import pytest

from qsshybrid.cli import cli_main
from qsshybrid.dae import Trace
from qsshybrid.errors import CaseValidationError
from qsshybrid.scenario import (
    data_path,
    load_bundled,
    parse_case,
    parse_schedule,
    read_trace,
    serialize_case,
    serialize_schedule,
    verdict_report,
    write_trace,
)

from conftest import scenario_run

MINIMAL = {
    "name": "two",
    "buses": [{"id": 1, "kind": "slack"}, {"id": 2}],
    "branches": [{"id": 1, "from_bus": 1, "to_bus": 2, "r": 0.0, "x": 0.1}],
}


def test_minimal_case_round_trip():
    case = parse_case(json.dumps(MINIMAL))
    text = serialize_case(case)
    assert parse_case(text) == case
    assert serialize_case(parse_case(text)) == text


@pytest.mark.parametrize("name", ["case1", "case2", "stable", "smib", "ieee14"])
def test_bundled_round_trip(name):
    case, schedule = load_bundled(name)
    assert parse_case(serialize_case(case)) == case
    assert parse_schedule(serialize_schedule(schedule), case) == schedule


def test_case1_roster():
    case, schedule = load_bundled("case1")
    assert len(case.generators) == len(case.avrs) == len(case.oxls) == 5
    assert all(o.T_delay == 40.0 for o in case.oxls)
    assert len(case.governors) == 2
    assert len(case.recovery_loads) == 3
    (ltc,) = case.ltcs
    assert (ltc.T_d0, ltc.dT) == (20.0, 10.0)
    assert len(schedule.events) == 3


def test_case2_roster():
    case, _ = load_bundled("case2")
    assert len(case.ltcs) == 3
    assert all((t.T_d0, t.dT) == (30.0, 10.0) for t in case.ltcs)
    assert all(o.T_delay == 30.0 for o in case.oxls)


def test_validation_collects_every_error():
    doc = json.loads(json.dumps(MINIMAL))
    doc["branches"].append({"id": 1, "from_bus": 1, "to_bus": 9, "r": 0.0, "x": 0.0})
    doc["generators"] = [{"id": "G", "bus": 7, "P": 0.5, "V": 1.0, "bogus": 1}]
    doc["widgets"] = []
    with pytest.raises(CaseValidationError) as err:
        parse_case(doc)
    msgs = err.value.errors
    assert any("widgets" in m for m in msgs)
    assert any("bogus" in m for m in msgs)

    del doc["widgets"]
    del doc["generators"]
    with pytest.raises(CaseValidationError) as err:
        parse_case(doc)
    msgs = err.value.errors
    assert any("duplicate branch" in m for m in msgs)
    assert any("unknown bus 9" in m for m in msgs)
    assert any("reactance" in m for m in msgs)


def test_malformed_json_rejected():
    with pytest.raises(CaseValidationError):
        parse_case("{not json")


def test_schedule_rejects_unknown_targets():
    case = parse_case(MINIMAL)
    with pytest.raises(CaseValidationError) as err:
        parse_schedule({"events": [{"t": 1.0, "kind": "trip_branch", "target": 5},
                                   {"t": -1.0, "kind": "explode", "target": 1}]}, case)
    assert len(err.value.errors) == 3


def _two_sample_trace():
    tr = Trace(("a", "b"))
    tr.t = [0.0, 0.1]
    tr.rows = [np.array([1.0, 2.0]), np.array([1.0 / 3.0, -2.5e-17])]
    tr.annotate("jump", "k=1", index=1)
    return tr


def test_two_sample_trace_csv():
    text = write_trace(_two_sample_trace(), io.StringIO())
    lines = text.splitlines()
    assert len(lines) == 3
    assert lines[0] == "t,event,a,b"


def test_trace_csv_round_trip_is_byte_identical():
    text = write_trace(_two_sample_trace(), io.StringIO())
    back = read_trace(io.StringIO(text))
    assert write_trace(back, io.StringIO()) == text
    assert back.rows[1][0] == 1.0 / 3.0


def test_full_trace_has_plot_columns(tmp_path):
    tr, _, _ = scenario_run("case1", "full")
    path = tmp_path / "case1.csv"
    write_trace(tr, path)
    header = path.read_text().splitlines()[0].split(",")
    case, _ = load_bundled("case1")
    for o in case.oxls:
        assert f"voxl_{o.gen}" in header
    assert any(h.startswith("tap") for h in header)
    assert len(path.read_text().splitlines()) == len(tr) + 1


def test_verdict_report_is_consistent():
    tr, v, _ = scenario_run("case2", "hybrid")
    rep = verdict_report("hybrid", v.outcome, tr, [sb.as_dict() for sb in v.switch_backs], v.phases)
    assert rep["outcome"] == "unstable" and rep["status"] == tr.status
    assert rep["t_final"] == tr.t[-1]
    json.dumps(rep)


def _cli(tmp_path, name, *extra):
    case, sched = data_path(f"{name}.json"), data_path(f"{name}_schedule.json")
    out, verdict = tmp_path / "trace.csv", tmp_path / "verdict.json"
    rc = cli_main(["--case", str(case), "--schedule", str(sched), "--out", str(out),
                   "--verdict", str(verdict), *extra])
    return rc, (json.loads(verdict.read_text()) if verdict.exists() else None), out


def test_cli_qss_stable(tmp_path, capsys):
    rc, rep, out = _cli(tmp_path, "stable", "--mode", "qss")
    assert rc == 0 and rep["outcome"] == "long-term-stable"
    assert out.exists()
    assert json.loads(capsys.readouterr().out)["outcome"] == "long-term-stable"


def test_cli_hybrid_case2(tmp_path):
    rc, rep, _ = _cli(tmp_path, "case2", "--mode", "hybrid", "--eta", "1e-3")
    assert rc == 0 and rep["outcome"] == "unstable"
    assert rep["switch_backs"][0]["reason"] == "oxl-deviation"


def test_cli_missing_case():
    assert cli_main(["--mode", "qss"]) == 2


def test_cli_missing_file(tmp_path):
    assert cli_main(["--case", str(tmp_path / "nope.json")]) == 2


def test_cli_unknown_flag():
    assert cli_main(["--case", "x.json", "--frobnicate"]) == 2


def test_cli_invalid_case(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"buses": []}))
    assert cli_main(["--case", str(bad)]) == 2


def test_cli_rejects_non_positive_step():
    case = data_path("smib.json")
    assert cli_main(["--case", str(case), "--dt", "0"]) == 2
