import json
import subprocess
import sys

import pytest

from epsvp import _data
from epsvp.cli import main
from epsvp.discrete import EventTrace

CTL = str(_data.resources.files("epsvp") / "data" / _data.PARALLEL_CLOSE_CONTROLLER)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_check_refined_passes(tmp_path, capsys):
    assert main(["check", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "check_report.json").read_text())
    assert report["verdicts"] == {"R1": "Pass", "R3": "Pass", "R4": "Pass"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["controller"] == "generate:refined" and manifest["command"] == "check"
    assert "R1: Pass" in capsys.readouterr().out


def test_check_parallel_controller_fails(tmp_path):
    assert main(["check", "--controller", CTL, "--out", str(tmp_path)]) == 1
    trace = EventTrace.loads((tmp_path / "counterexample.jsonl").read_text())
    assert ("C3", "closed") in trace.pairs()
    assert json.loads((tmp_path / "check_report.json").read_text())["verdicts"]["R1"] == "Fail"


def test_check_writes_scenario_trace(tmp_path):
    sc = write(tmp_path, "s.json", _data.data_text(_data.GENERATOR_FAILURE_SCENARIO))
    assert main(["check", "--scenario", sc, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "trace.jsonl").read_text().count("\n") > 10


def test_usage_errors(tmp_path, capsys):
    assert main(["check", "--topology", str(tmp_path / "missing.json")]) == 2
    assert "no such file" in capsys.readouterr().err
    bad = write(tmp_path, "bad.json", "{not json")
    assert main(["check", "--topology", bad, "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["check", "--controller", CTL, "--generate-controller", "naive"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main([])


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("EPSVP_OUT", str(tmp_path / "env-out"))
    assert main(["reliability"]) == 0
    assert (tmp_path / "env-out" / "reliability_report.json").exists()


def test_simulate_naive_and_refined(tmp_path, capsys):
    args = ["simulate", "--duration", "0.7"]
    assert main(args + ["--generate-controller", "naive", "--out", str(tmp_path / "n")]) == 1
    assert "R1 violated" in capsys.readouterr().out
    report = json.loads((tmp_path / "n" / "observer_report.json").read_text())
    assert len(report["violations"]["R1"]) == 1
    assert main(args + ["--out", str(tmp_path / "r")]) == 0
    header = (tmp_path / "r" / "waveforms.csv").read_text().split("\n", 1)[0]
    assert header.startswith("time,V:")


def test_simulate_event_beyond_duration(tmp_path, capsys):
    assert main(["simulate", "--duration", "0.2", "--out", str(tmp_path)]) == 0
    assert "never fired" in capsys.readouterr().out
    notes = json.loads((tmp_path / "observer_report.json").read_text())["notes"]
    assert len(notes) == 1


def test_reliability_reports(tmp_path):
    assert main(["reliability", "--chain-check", "--out", str(tmp_path)]) == 0
    r = json.loads((tmp_path / "reliability_report.json").read_text())
    assert len(r["mustHandle"]) == 6
    assert r["targets"]["B1"]["method"] == "exact"
    assert r["targets"]["B1"]["probability"] == "9.98501249250e-10"
    assert all(c["verdict"] == "Pass" for c in r["chainCheck"])
    assert main(["reliability", "--threshold", "1.0", "--out", str(tmp_path)]) == 0


def test_reliability_names_uncovered_pair(tmp_path, topo, lists, capsys):
    # A controller generated as if C2 did not exist never uses the tie to B1.
    from epsvp.controller import default_controller
    from epsvp.requirements import PriorityList
    t = topo.without("C2")
    crippled = default_controller(t, [PriorityList(p.bus, p.effective(t), p.requirement)
                                      for p in lists])
    ctl = write(tmp_path, "crippled.json", crippled.dumps())
    code = main(["reliability", "--controller", ctl, "--chain-check", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 1
    assert "uncovered combination APU+L1" in out
    r = json.loads((tmp_path / "reliability_report.json").read_text())
    verdicts = {tuple(c["failed"]): c for c in r["chainCheck"]}
    assert verdicts[("APU", "L1")]["verdict"] == "Fail"
    assert "B1" in verdicts[("APU", "L1")]["detail"]
    assert verdicts[("APU",)]["verdict"] == "Pass"


def test_reliability_rates_file(tmp_path):
    rates = write(tmp_path, "r.json", '{"failureRates": {"L1": 2e-4, "APU": 2e-4, "R1": 2e-4}}')
    assert main(["reliability", "--rates", rates, "--out", str(tmp_path)]) == 1
    r = json.loads((tmp_path / "reliability_report.json").read_text())
    assert any(len(c["failed"]) == 3 for c in r["mustHandle"])


def test_paths_and_trace_diff(tmp_path, capsys):
    assert main(["paths", "--out", str(tmp_path)]) == 0
    paths = json.loads((tmp_path / "paths.json").read_text())
    assert {"source": "L1", "contactors": ["C1"]} in paths["B1"]
    sc = write(tmp_path, "s.json", _data.data_text(_data.GENERATOR_FAILURE_SCENARIO))
    main(["check", "--scenario", sc, "--out", str(tmp_path / "c")])
    trace = str(tmp_path / "c" / "trace.jsonl")
    spec = write(tmp_path, "spec.json", _data.data_text(_data.GENERATOR_FAILURE_SEQUENCE))
    assert main(["trace-diff", trace, spec]) == 0
    assert main(["trace-diff", trace, trace]) == 0
    assert main(["trace-diff", spec, trace]) == 2
    capsys.readouterr()
    assert main(["trace-diff", trace, str(tmp_path / "nope")]) == 2


def test_outputs_deterministic(tmp_path):
    for d in ("a", "b"):
        main(["simulate", "--duration", "0.05", "--out", str(tmp_path / d)])
        main(["reliability", "--chain-check", "--out", str(tmp_path / d)])
        main(["check", "--controller", CTL, "--out", str(tmp_path / d)])
    for name in ("waveforms.csv", "observer_report.json", "trace.jsonl",
                 "reliability_report.json", "check_report.json", "counterexample.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_console_script_module(tmp_path):
    res = subprocess.run([sys.executable, "-m", "epsvp.cli", "paths"], capture_output=True,
                         text=True, check=False)
    assert res.returncode == 0 and '"B1"' in res.stdout
