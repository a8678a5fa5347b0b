"""Child process entry point (``--role ...``).

The child speaks JSON lines: it reports ``bound`` with its UDP port, then
obeys ``connect``, ``start``, ``go`` and ``stop`` commands read from stdin.
EOF on stdin counts as ``stop``. Exit codes: 0 ok, 2 config error,
3 runtime/isolation error.
"""
from __future__ import annotations

import argparse
import importlib
import json
import os
import signal
import sys
from pathlib import Path

from ..config import ConfigError, parse_workload_spec
from ..model import ModelError
from ..tracing import TRACE_DIR_ENV

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

ROLES = {
    "node-host": "chainbench.orchestrator.child:make_node_host",
    "bench-pingpong": "chainbench.benchmarks.pingpong:make_host",
    "bench-rate": "chainbench.benchmarks.rate:make_host",
}


class _Terminate(Exception):
    pass


class _ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _ArgParser(prog="chainbench --role", description="chainbench child process")
    p.add_argument("--role", required=True, choices=sorted(ROLES))
    p.add_argument("--run-id", required=True)
    p.add_argument("--group", default="group")
    p.add_argument("--spec", help="workload spec file")
    p.add_argument("--module", action="append", default=[], help="module to host (repeatable)")
    p.add_argument("--nodes", default="", help="comma separated node names (bench roles)")
    p.add_argument("--cpus", help="comma separated cpu ids to pin to")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    return p


def params_of(args) -> dict:
    out = {}
    for item in args.param:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--param needs KEY=VALUE, got {item!r}")
        out[key] = value
    return out


def make_node_host(args):
    from ..workload import NodeHost

    if not args.spec:
        raise ConfigError("node-host needs --spec")
    spec = parse_workload_spec(Path(args.spec).read_text())
    if not args.module:
        raise ConfigError("node-host needs at least one --module")
    nodes = []
    for module in args.module:
        if module not in spec.manifest.module_names:
            raise ConfigError(f"unknown module {module!r}")
        nodes.extend(spec.manifest.nodes_of(module))
    return NodeHost(spec, nodes, args.run_id, group=args.group, seed=args.seed)


def _factory(role: str):
    mod, _, attr = ROLES[role].partition(":")
    return getattr(importlib.import_module(mod), attr)


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    def on_term(signum, frame):
        raise _Terminate()

    signal.signal(signal.SIGTERM, on_term)
    if args.cpus:
        try:
            os.sched_setaffinity(0, {int(c) for c in args.cpus.split(",")})
        except (OSError, ValueError, AttributeError) as exc:
            _emit({"event": "error", "code": EXIT_RUNTIME, "message": f"affinity: {exc}"})
            return EXIT_RUNTIME
    try:
        host = _factory(args.role)(args)
        port = host.bind()
    except (ConfigError, ModelError, OSError, KeyError) as exc:
        code = EXIT_RUNTIME if isinstance(exc, OSError) else EXIT_CONFIG
        _emit({"event": "error", "code": code, "message": str(exc)})
        return code

    _emit({"event": "bound", "pid": os.getpid(), "port": port, "group": args.group,
           "nodes": list(host.node_names)})
    started = False
    code = EXIT_OK
    try:
        for line in sys.stdin:
            msg = json.loads(line)
            cmd = msg.get("cmd")
            if cmd == "connect":
                peers = {g: tuple(a) for g, a in msg.get("peers", {}).items()}
                host.connect(msg.get("placement", {}), peers)
                _emit({"event": "connected"})
            elif cmd == "start":
                host.start()
                started = True
                _emit({"event": "running"})
            elif cmd == "go":
                result = host.go(**msg.get("params", {}))
                _emit({"event": "result", "result": result})
            elif cmd == "stop":
                break
            else:
                _emit({"event": "error", "code": EXIT_CONFIG, "message": f"unknown command {cmd!r}"})
    except _Terminate:
        pass
    except Exception as exc:  # reported to the driver, then teardown below
        _emit({"event": "error", "code": EXIT_RUNTIME, "message": f"{type(exc).__name__}: {exc}"})
        code = EXIT_RUNTIME
    try:
        if started:
            host.stop()
        trace = host.flush(os.environ.get(TRACE_DIR_ENV))
        _emit({"event": "stopped", "trace": str(trace), **host.status()})
    except (_Terminate, BrokenPipeError):
        return code
    return code
