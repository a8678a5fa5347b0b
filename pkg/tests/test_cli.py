from __future__ import annotations

import json
import subprocess
import sys

import pytest

import chainbench.benchmarks as benchmarks
from chainbench.analysis import parse_report_csv
from chainbench.cli import build_parser, main, parse_duration, parse_variants

SPEC = """\
node cam
  timer 40 tick
  pub /img 512 on tick
node det
  sub /img on_img
  pub /obj 64 on on_img
  compute fixed 1
node ctl
  sub /obj on_obj
  timer 25 loop reads=/obj
  pub /cmd 16 on loop
module sense: cam
module think: det,ctl
"""

CHAIN = "det::(Image)\nctl::(Objects)\nctl::()\n"


@pytest.fixture
def workload(tmp_path):
    (tmp_path / "w.spec").write_text(SPEC)
    (tmp_path / "c.spec").write_text(CHAIN)
    return tmp_path / "w.spec", tmp_path / "c.spec"


def test_help_and_bare_invocations(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    assert "analyze" in capsys.readouterr().out
    assert main([]) == 0
    assert main(["bench"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "chainbench", "run", "--help"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and "--deployment" in proc.stdout


@pytest.mark.parametrize("argv", [
    ["run", "--runs", "0"],
    ["run", "--frobnicate"],
    ["run", "--deployment", "sideways"],
    ["run", "--scale", "0"],
    ["run", "--spec", "missing-chain.spec"],
    ["bench", "rate", "--fps", "-3"],
    ["bench", "pingpong", "--size", "lots"],
    ["analyze"],
])
def test_config_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "missing-chain.spec").write_text(SPEC)
    with pytest.raises(SystemExit) as info:
        code = main(argv)
        raise SystemExit(code)
    assert info.value.code == 2


def test_parsers():
    assert parse_duration("90") == 90 and parse_duration("2m") == 120 and parse_duration("250ms") == 0.25
    assert parse_variants("all") == ["in_process", "single_group", "multi_group"]
    assert parse_variants("in-process,multi-group") == ["in_process", "multi_group"]


@pytest.mark.parametrize("flag", ["--full-scale", "--paper-scale"])
def test_full_scale_flag_spellings(flag):
    parser = build_parser()
    assert parser.parse_args(["run", flag]).full_scale
    assert parser.parse_args(["bench", "rate", flag]).full_scale
    assert not parser.parse_args(["bench", "pingpong"]).full_scale


def test_default_sweep_uses_thirteen_sizes(tmp_path, monkeypatch):
    seen = {}

    def fake_sweep(sizes, repeats, duration, mode, plan, progress=None):
        seen.update(sizes=list(sizes), repeats=repeats, duration=duration, variant=plan.variant)
        return benchmarks.PingPongSweep({s: [benchmarks.PingPongResult(s, 1, 1, 0, 0, 1.0, (1000,))]
                                         for s in sizes})

    monkeypatch.setattr(benchmarks, "pingpong_sweep", fake_sweep)
    assert main(["bench", "pingpong", "--out", str(tmp_path)]) == 0
    assert seen["sizes"] == list(benchmarks.SWEEP_SIZES) and len(seen["sizes"]) == 13
    assert seen["variant"] == "multi_group" and seen["repeats"] == 3 and seen["duration"] == 30
    rows = (tmp_path / "pingpong.csv").read_text().splitlines()
    assert len(rows) == 1 + 13 * 2


def test_run_analyze_report(tmp_path, workload, capsys):
    spec, chain = workload
    out = tmp_path / "out"
    code = main(["run", "--spec", str(spec), "--chain", str(chain), "--deployment", "in-process,single-group",
                 "--runs", "1", "--duration", "1.5", "--out", str(out)])
    assert code == 0
    records = sorted(out.glob("runs/*/record.json"))
    assert [p.parent.name for p in records] == ["in_process-001", "single_group-001"]
    for p in records:
        rec = json.loads(p.read_text())
        assert rec["outcome"] == "valid", rec["problems"]
        assert rec["paths"]["samples"] > 0
    dest = tmp_path / "analysis"
    assert main(["analyze", str(out / "runs"), "--out", str(dest)]) == 0
    produced = sorted(p.name for p in dest.iterdir())
    assert produced == ["histogram_in_process.csv", "histogram_single_group.csv", "paths.csv",
                        "rampup.csv", "report.csv", "report.txt"]
    assert not (out / "runs" / "analysis").exists()
    summaries = parse_report_csv((dest / "report.csv").read_text())
    assert len(summaries) == 8
    capsys.readouterr()
    assert main(["report", str(dest / "report.csv")]) == 0
    assert capsys.readouterr().out == (dest / "report.txt").read_text()


def test_analyze_empty_trace_is_config_error(tmp_path, workload):
    spec, chain = workload
    run = tmp_path / "runs" / "in_process-001"
    run.mkdir(parents=True)
    (tmp_path / "chain.txt").write_text(CHAIN)
    (tmp_path / "workload.spec").write_text(SPEC)
    (run / "record.json").write_text(json.dumps({
        "run_id": "in_process-001", "variant": "in_process", "outcome": "valid",
        "spec_file": "../../workload.spec", "chain_file": "../../chain.txt"}))
    (run / "in_process-001-1.trace").write_text("#chainbench-trace v1 run=in_process-001\n#dropped=0\n")
    assert main(["analyze", str(tmp_path / "runs")]) == 2
    assert main(["analyze", str(tmp_path / "nowhere")]) == 2


def test_report_rejects_bad_csv(tmp_path):
    bad = tmp_path / "r.csv"
    bad.write_text("not,a,report\n")
    assert main(["report", str(bad)]) == 2
    assert main(["report", str(tmp_path / "absent.csv")]) == 2
