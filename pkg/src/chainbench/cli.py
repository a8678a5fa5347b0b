"""Command line entry point: ``chainbench run|analyze|report|bench``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .config import ConfigError, parse_chain_spec, parse_workload_spec, render_chain_spec, \
    render_workload_spec, resolve_chain, validate_graph
from .model import VARIANTS, DeploymentPlan, ModelError, ResourceLimits

log = logging.getLogger("chainbench")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_INTERRUPTED = 130

DEFAULT_RUN_SECONDS = 5.0
FULL_RUN_SECONDS = 60.0
DEFAULT_RUNS = 3
FULL_RUNS = 100
DEFAULT_BIN_MS = 5.0


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# -- argument helpers ------------------------------------------------------------

_DURATION = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ms|s|m|min|h)?\s*$")
_DUR_UNITS = {None: 1.0, "s": 1.0, "ms": 1e-3, "m": 60.0, "min": 60.0, "h": 3600.0}


def parse_duration(text: str) -> float:
    """``"30s"``, ``"500ms"``, ``"5m"`` or plain seconds, as seconds."""
    m = _DURATION.match(text)
    if not m or float(m.group(1)) <= 0:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}")
    return float(m.group(1)) * _DUR_UNITS[m.group(2)]


def parse_variants(text: str) -> list[str]:
    """``all`` or a comma list such as ``in-process,multi_group``."""
    out: list[str] = []
    for part in text.split(","):
        v = part.strip().replace("-", "_")
        if v == "all":
            picked = list(VARIANTS)
        elif v in VARIANTS:
            picked = [v]
        else:
            raise argparse.ArgumentTypeError(f"unknown deployment {part!r}; choose from {', '.join(VARIANTS)} or all")
        out += [x for x in picked if x not in out]
    return out


def _size(text: str) -> int:
    from .benchmarks import parse_size

    try:
        return parse_size(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _affinity(text: str) -> dict:
    """``"*=0,1"`` or ``"planning=0;control=1"``."""
    out = {}
    for part in text.split(";"):
        group, sep, cpus = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"bad affinity {part!r}, expected GROUP=CPU[,CPU]")
        try:
            out[group.strip()] = [int(c) for c in cpus.split(",") if c.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad cpu list {cpus!r}") from None
    return out


def _plan(variant: str, args) -> DeploymentPlan:
    isolation = args.isolation.replace("-", "_")
    if variant == "in_process":
        isolation = "none"
    limits = None
    if args.cpu_quota is not None or args.memory is not None:
        limits = ResourceLimits(args.cpu_quota, args.memory)
    return DeploymentPlan(variant, isolation, args.affinity if variant != "in_process" else None, limits)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


# -- run -----------------------------------------------------------------------------

def _load_workload(args):
    from .workload import PresetConfig, build_mini_autoware

    if args.spec:
        spec = parse_workload_spec(Path(args.spec).read_text(encoding="utf-8"))
        if not args.chain:
            raise CliError("--spec needs --chain")
        chain = parse_chain_spec(Path(args.chain).read_text(encoding="utf-8"))
        report = validate_graph(spec, chain)
        if not report.valid:
            raise CliError("; ".join(f"{f.code}: {f.message}" for f in report.fatal))
        return spec, report.chain
    if args.preset != "mini-autoware":
        raise CliError(f"unknown preset {args.preset!r}")
    spec, _, chain = build_mini_autoware(PresetConfig(scale=args.scale))
    if args.chain:
        chain = resolve_chain(spec, parse_chain_spec(Path(args.chain).read_text(encoding="utf-8")))
    return spec, chain


def _next_run_id(runs_dir: Path, variant: str, counter: dict) -> str:
    k = counter.get(variant, 0)
    while True:
        k += 1
        run_id = f"{variant}-{k:03d}"
        if not (runs_dir / run_id).exists():
            counter[variant] = k
            return run_id


def _check_run(handle, reports: dict, trace, spec, chain) -> tuple[list[str], dict]:
    from .analysis import path_counts, reconstruct_paths
    from .orchestrator import measure_rampup

    problems = []
    for group, rep in reports.items():
        if rep.get("exit_code") not in (0, None) or "error" in rep:
            problems.append(f"group {group} exit {rep.get('exit_code')} {rep.get('error', '')}".strip())
        if rep.get("dropped"):
            problems.append(f"group {group} dropped {rep['dropped']} trace events")
        if rep.get("failed"):
            problems.append(f"group {group} failed nodes {rep['failed']}")
    if handle.orphans:
        problems.append(f"orphan process groups {handle.orphans}")
    info: dict = {}
    if trace is None:
        problems.append("no trace")
        return problems, info
    ramp = measure_rampup(trace, spec.node_names, handle.start_ts)
    info["rampup_s"] = ramp.seconds
    info["rampup_missing"] = list(ramp.missing)
    if ramp.missing:
        problems.append(f"{len(ramp.missing)} nodes never became ready")
    try:
        counts = path_counts(reconstruct_paths(trace, chain))
    except ValueError as exc:
        problems.append(str(exc))
        counts = {}
    info["paths"] = counts
    if not counts.get("samples"):
        problems.append("no complete chain path")
    return problems, info


def _execute_run(spec, chain, plan, run_id: str, run_dir: Path, seconds: float, seed: int) -> dict:
    from .orchestrator import LaunchError, ResourceSampler, launch
    from .tracing import TraceFormatError, load_run

    record = {"run_id": run_id, "variant": plan.variant, "plan": asdict(plan),
              "started": _now_iso(), "duration_s": seconds, "seed": seed}
    samples = []
    handle = None
    try:
        handle = launch(spec, plan, run_id=run_id, trace_dir=run_dir, seed=seed, log_dir=run_dir)
        record["launch_ts_ns"] = handle.start_ts
        record["groups"] = {g: list(n) for g, n in handle.node_sets().items()}
        sampler = ResourceSampler(handle.processes).start()
        try:
            time.sleep(seconds)
        finally:
            samples = sampler.stop()
            reports = handle.stop()
    except LaunchError as exc:
        if handle is not None:
            handle.teardown()
        record.update(outcome="invalid", problems=[f"launch failed: {exc}"], ended=_now_iso())
        return record
    record["warnings"] = list(handle.warnings)
    record["groups_report"] = reports
    record["trace_files"] = sorted(str(Path(p).name) for p in handle.trace_paths)
    try:
        trace = load_run(run_dir, run_id)
    except (TraceFormatError, OSError):
        trace = None
    problems, info = _check_run(handle, reports, trace, spec, chain)
    record.update(info)
    with open(run_dir / "resources.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("t_ns", "pid", "group", "cpu_percent", "rss_bytes"))
        for s in samples:
            for p in s.procs:
                w.writerow((s.t, p.pid, p.group, repr(p.cpu_percent), p.rss_bytes))
    if samples:
        record["mean_cpu_percent"] = sum(s.total_cpu() for s in samples) / len(samples)
        record["mean_rss_bytes"] = sum(s.total_rss() for s in samples) / len(samples)
    record["outcome"] = "invalid" if problems else "valid"
    record["problems"] = problems
    record["ended"] = _now_iso()
    return record


def cmd_run(args) -> int:
    if args.runs is not None and args.runs < 1:
        raise CliError("--runs must be >= 1")
    runs = args.runs or (FULL_RUNS if args.full_scale else DEFAULT_RUNS)
    seconds = args.duration or (FULL_RUN_SECONDS if args.full_scale else DEFAULT_RUN_SECONDS)
    retries = runs if args.retries is None else args.retries
    spec, chain = _load_workload(args)
    plans = [_plan(v, args) for v in args.deployment]
    for plan in plans:
        plan.check(spec.manifest)

    out = Path(args.out)
    spec_text = render_workload_spec(spec)
    _write(out / "workload.spec", spec_text)
    _write(out / "chain.txt", render_chain_spec(chain, annotate=True))
    spec_hash = hashlib.sha256(spec_text.encode()).hexdigest()
    runs_dir = out / "runs"
    counter: dict = {}
    failed_variants = []
    for plan in plans:
        valid = attempts = 0
        while valid < runs and attempts - valid <= retries:
            attempts += 1
            run_id = _next_run_id(runs_dir, plan.variant, counter)
            run_dir = runs_dir / run_id
            run_dir.mkdir(parents=True)
            record = _execute_run(spec, chain, plan, run_id, run_dir, seconds, args.seed)
            record.update(spec_sha256=spec_hash, spec_file="../../workload.spec",
                          chain_file="../../chain.txt", attempt=attempts)
            _write(run_dir / "record.json", json.dumps(record, indent=2, default=str))
            if record["outcome"] == "valid":
                valid += 1
            ramp = record.get("rampup_s")
            ramp_txt = f"{ramp:.2f}s" if ramp is not None else "n/a"
            samples = record.get("paths", {}).get("samples", 0)
            print(f"{run_id}: {record['outcome']} ramp-up {ramp_txt} data-age samples {samples}"
                  + (f" ({'; '.join(record['problems'])})" if record["problems"] else ""), flush=True)
        if valid < runs:
            failed_variants.append(plan.variant)
    if failed_variants:
        print(f"retry budget exhausted for {', '.join(failed_variants)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- analyze ---------------------------------------------------------------------------

def _records(root: Path) -> list[tuple[Path, dict]]:
    found = []
    for path in sorted(root.glob("**/record.json")):
        try:
            found.append((path.parent, json.loads(path.read_text(encoding="utf-8"))))
        except ValueError:
            log.warning("skipping unreadable %s", path)
    return found


def cmd_analyze(args) -> int:
    from .analysis import (KPIS, breakdown_series, histogram, path_counts, reconstruct_paths,
                           render_histogram_csv, render_report, summarize)
    from .tracing import TraceFormatError, load_run

    root = Path(args.runs_dir)
    if not root.exists():
        raise CliError(f"{root} does not exist")
    out = Path(args.out) if args.out else root / "analysis"
    records = [(d, r) for d, r in _records(root) if r.get("outcome") == "valid" or args.include_invalid]
    if not records:
        raise CliError(f"no run records under {root}")

    series: dict[str, dict[str, list]] = {}
    path_rows = []
    ramp: dict[str, list] = {}
    chain_cache: dict[Path, object] = {}
    for run_dir, rec in records:
        chain_path = Path(args.chain) if args.chain else (run_dir / rec.get("chain_file", "chain.txt")).resolve()
        spec_path = (run_dir / rec.get("spec_file", "workload.spec")).resolve()
        if chain_path not in chain_cache:
            if not chain_path.exists():
                raise CliError(f"missing chain file {chain_path}")
            chain = parse_chain_spec(chain_path.read_text(encoding="utf-8"))
            if not chain.resolved:
                if not spec_path.exists():
                    raise CliError(f"chain needs the workload spec {spec_path} to resolve")
                chain = resolve_chain(parse_workload_spec(spec_path.read_text(encoding="utf-8")), chain)
            chain_cache[chain_path] = chain
        chain = chain_cache[chain_path]
        try:
            trace = load_run(run_dir, rec["run_id"])
        except (TraceFormatError, OSError) as exc:
            raise CliError(f"run {rec['run_id']}: {exc}") from None
        if not trace.events:
            raise CliError(f"run {rec['run_id']}: empty trace")
        try:
            paths = reconstruct_paths(trace, chain)
        except ValueError as exc:
            raise CliError(f"run {rec['run_id']}: {exc}") from None
        variant = rec.get("variant", "unknown")
        bs = breakdown_series(paths)
        per_variant = series.setdefault(variant, {k: [] for k in KPIS})
        for k in KPIS:
            per_variant[k].extend(bs[k])
        counts = path_counts(paths)
        path_rows.append((rec["run_id"], variant, counts))
        if rec.get("rampup_s") is not None:
            ramp.setdefault(variant, []).append(rec["rampup_s"])

    summaries = {}
    for variant, kpis in series.items():
        for kpi, values in kpis.items():
            if values:
                summaries[(kpi, variant)] = summarize(values)
    if not summaries:
        raise CliError("no complete chain paths in any run")
    report = render_report(summaries)
    _write(out / "report.txt", report.text)
    _write(out / "report.csv", report.csv)
    for variant, kpis in series.items():
        if kpis["E2E"]:
            _write(out / f"histogram_{variant}.csv", render_histogram_csv(histogram(kpis["E2E"], args.bin_width)))
    lines = ["run_id,variant,paths,complete,incomplete,sensor_inputs,samples"]
    for run_id, variant, c in path_rows:
        lines.append(f"{run_id},{variant},{c['paths']},{c['complete']},{c['incomplete']},"
                     f"{c['sensor_inputs']},{c['samples']}")
    _write(out / "paths.csv", "\n".join(lines) + "\n")
    ramp_lines = ["variant,runs,mean_rampup_s,min_rampup_s,max_rampup_s"]
    for variant, vals in ramp.items():
        ramp_lines.append(f"{variant},{len(vals)},{sum(vals) / len(vals)!r},{min(vals)!r},{max(vals)!r}")
    _write(out / "rampup.csv", "\n".join(ramp_lines) + "\n")

    print(report.text, end="")
    incomplete = sum(c["incomplete"] for _, _, c in path_rows)
    print(f"\n{len(records)} runs, {incomplete} incomplete paths excluded")
    if ramp:
        print("ramp-up (mean s): " + ", ".join(f"{v} {sum(x) / len(x):.2f}" for v, x in ramp.items()))
    print(f"written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .analysis import ReportFormatError, parse_report_csv, render_report

    path = Path(args.report_csv)
    if not path.exists():
        raise CliError(f"{path} does not exist")
    try:
        summaries = parse_report_csv(path.read_text(encoding="utf-8"))
    except ReportFormatError as exc:
        raise CliError(str(exc)) from None
    if not summaries:
        raise CliError("report has no rows")
    report = render_report(summaries)
    if args.out:
        _write(Path(args.out) / "report.txt", report.text)
    print(report.text, end="")
    return EXIT_OK


# -- bench -------------------------------------------------------------------------------

def cmd_bench_pingpong(args) -> int:
    from .benchmarks import SWEEP_SIZES, format_size, pingpong_sweep
    from .benchmarks.pingpong import FULL_DURATION as FULL_PINGPONG_DURATION

    sizes = args.size or list(SWEEP_SIZES)
    duration = args.duration or (FULL_PINGPONG_DURATION if args.full_scale else 30.0)
    out = Path(args.out)
    rows = ["deployment,size_bytes,repeat,mean_rtt_us,packet_count,lost"]
    for variant in args.deployment:
        plan = _plan(variant, args)

        def progress(size, rep, r, variant=variant):
            print(f"{variant} {format_size(size)} #{rep}: mean RTT {r.mean_rtt:.1f} us, "
                  f"{r.packet_count} round trips, {r.lost} lost", flush=True)

        sweep = pingpong_sweep(sizes, args.repeats, duration, args.mode, plan, progress=progress)
        for row in sweep.rows():
            rep = "mean" if row.repeat is None else str(row.repeat)
            rows.append(f"{variant},{row.message_size},{rep},{row.mean_rtt_us!r},{row.packet_count!r},{row.lost!r}")
    _write(out / "pingpong.csv", "\n".join(rows) + "\n")
    print(f"written to {out / 'pingpong.csv'}")
    return EXIT_OK


def cmd_bench_rate(args) -> int:
    from .benchmarks import MAX, RATES, RateConfig, rate_run
    from .benchmarks.rate import FULL_RUNS as FULL_RATE_RUNS

    rates = args.fps or [*RATES, MAX]
    runs = args.runs or (FULL_RATE_RUNS if args.full_scale else 10)
    out = Path(args.out)
    rows = ["deployment,fps,runs,iterations,mean_latency_ms,mean_jitter_ms,mean_cpu_percent,"
            "published,dropped,mean_interval_ms"]
    for variant in args.deployment:
        plan = _plan(variant, args)
        for rate in rates:
            cfg = RateConfig(rate, runs, args.iterations, args.iteration_seconds, args.payload,
                             int(args.compute_ms * 1e6), plan)
            res = rate_run(cfg)
            print(f"{variant} {rate} fps: latency {res.mean_latency:.2f} ms, jitter {res.mean_jitter:.2f} ms, "
                  f"cpu {res.mean_cpu:.1f}%, dropped {res.dropped}/{res.published}", flush=True)
            rows.append(f"{variant},{rate},{runs},{args.iterations},{res.mean_latency!r},{res.mean_jitter!r},"
                        f"{res.mean_cpu!r},{res.published},{res.dropped},{res.mean_interval_ms!r}")
    _write(out / "rate.csv", "\n".join(rows) + "\n")
    print(f"written to {out / 'rate.csv'}")
    return EXIT_OK


def _fps(text: str):
    if text == "max":
        return "max"
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"fps must be a positive integer or 'max', got {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError("fps must be positive")
    return v


def _add_deployment_args(p, default: str) -> None:
    p.add_argument("--deployment", type=parse_variants, default=parse_variants(default),
                   help="in-process, single-group, multi-group or all (default: %(default)s)")
    p.add_argument("--isolation", choices=("none", "process-group", "process-group-with-limits"), default="none")
    p.add_argument("--affinity", type=_affinity, default=None, help='e.g. "*=0" or "planning=0;control=1"')
    p.add_argument("--cpu-quota", type=float, default=None, help="cores per group (needs limits isolation)")
    p.add_argument("--memory", type=_size, default=None, help="memory limit per group, e.g. 512MB")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chainbench", description="Deployment-variant latency benchmarks for pub/sub workloads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run a workload under one or more deployment variants")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--preset", default="mini-autoware")
    src.add_argument("--spec", help="workload spec file")
    r.add_argument("--chain", help="chain spec file (required with --spec)")
    r.add_argument("--scale", type=float, default=1.0, help="preset node-count scale in (0, 1]")
    _add_deployment_args(r, "in-process")
    r.add_argument("--runs", type=int, default=None, help=f"valid runs per variant (default {DEFAULT_RUNS})")
    r.add_argument("--duration", type=parse_duration, default=None,
                   help=f"measurement time per run (default {DEFAULT_RUN_SECONDS:g}s)")
    r.add_argument("--retries", type=int, default=None, help="extra attempts for invalid runs (default: runs)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="chainbench-out")
    r.add_argument("--full-scale", "--paper-scale", dest="full_scale", action="store_true",
                   help="use full-length durations and run counts")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="reconstruct chain paths and emit the latency report")
    a.add_argument("runs_dir")
    a.add_argument("--chain", help="override the chain recorded with the runs")
    a.add_argument("--bin-width", type=float, default=DEFAULT_BIN_MS, help="histogram bin width in ms")
    a.add_argument("--include-invalid", action="store_true")
    a.add_argument("--out", help="output directory (default: RUNS_DIR/analysis)")
    a.set_defaults(func=cmd_analyze)

    rp = sub.add_parser("report", help="render a report CSV as a text table")
    rp.add_argument("report_csv")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)

    b = sub.add_parser("bench", help="middleware micro-benchmarks")
    bsub = b.add_subparsers(dest="bench", parser_class=_Parser)
    pp = bsub.add_parser("pingpong", help="round-trip latency over message sizes")
    pp.add_argument("--size", type=_size, action="append", help="message size, repeatable (default: 13-size sweep)")
    pp.add_argument("--mode", choices=("best-effort", "reliable"), default="best-effort")
    _add_deployment_args(pp, "multi-group")
    pp.add_argument("--duration", type=parse_duration, default=None, help="per size and repeat (default 30s)")
    pp.add_argument("--repeats", type=int, default=3)
    pp.add_argument("--out", default="chainbench-out")
    pp.add_argument("--full-scale", "--paper-scale", dest="full_scale", action="store_true")
    pp.set_defaults(func=cmd_bench_pingpong)

    rt = bsub.add_parser("rate", help="frame-rate sweep with a fixed-compute worker")
    rt.add_argument("--fps", type=_fps, action="append", help="10, 30, 60 or max; repeatable (default: all)")
    rt.add_argument("--runs", type=int, default=None)
    rt.add_argument("--iterations", type=int, default=5)
    rt.add_argument("--iteration-seconds", type=float, default=2.0)
    rt.add_argument("--compute-ms", type=float, default=5.0)
    rt.add_argument("--payload", type=_size, default=920_000)
    _add_deployment_args(rt, "in-process")
    rt.add_argument("--out", default="chainbench-out")
    rt.add_argument("--full-scale", "--paper-scale", dest="full_scale", action="store_true")
    rt.set_defaults(func=cmd_bench_rate)
    return p


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "--role":
        from .orchestrator.child import main as child_main

        return child_main(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "func", None):
        target = parser
        if args.command == "bench":
            target = parser._subparsers._group_actions[0].choices["bench"]
        target.print_help()
        return EXIT_CONFIG if args.command else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"chainbench: error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ModelError, ValueError) as exc:
        print(f"chainbench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; processes torn down", file=sys.stderr)
        return EXIT_INTERRUPTED
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"chainbench: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
