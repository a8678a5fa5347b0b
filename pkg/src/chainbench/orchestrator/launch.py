"""Driver side of a run: spawn process groups, wire them, tear them down."""
from __future__ import annotations

import json
import logging
import os
import queue
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import chainbench

from ..config import render_workload_spec
from ..model import DeploymentPlan, WorkloadSpec
from ..tracing import TRACE_DIR_ENV, now_ns
from .child import EXIT_CONFIG, EXIT_RUNTIME
from .isolation import IsolationDriver, IsolationUnavailable

log = logging.getLogger(__name__)

BOUND_TIMEOUT = 60.0
REPLY_TIMEOUT = 30.0


class LaunchError(RuntimeError):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class GroupSpec:
    name: str
    nodes: tuple
    args: tuple = ()  # role specific arguments


class _Channel:
    """Line reader over a child's stdout, drained by a daemon thread."""

    def __init__(self, proc: subprocess.Popen, name: str):
        self.proc = proc
        self.messages: "queue.Queue" = queue.Queue()
        self._t = threading.Thread(target=self._pump, name=f"chan-{name}", daemon=True)
        self._t.start()

    def _pump(self) -> None:
        for line in self.proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                self.messages.put(json.loads(line))
            except ValueError:
                log.debug("non-protocol output from child: %s", line)
        self.messages.put(None)

    def expect(self, event: str, timeout: float) -> dict:
        deadline = time.monotonic() + timeout
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                raise LaunchError(f"timed out waiting for {event!r}")
            try:
                msg = self.messages.get(timeout=left)
            except queue.Empty:
                continue
            if msg is None:
                code = self.proc.wait(timeout=5)
                raise LaunchError(f"child exited with code {code} before {event!r}",
                                  EXIT_CONFIG if code == EXIT_CONFIG else EXIT_RUNTIME)
            if msg.get("event") == "error":
                raise LaunchError(msg.get("message", "child error"), msg.get("code", EXIT_RUNTIME))
            if msg.get("event") == event:
                return msg

    def send(self, obj: dict) -> None:
        self.proc.stdin.write(json.dumps(obj) + "\n")
        self.proc.stdin.flush()


@dataclass
class ChildGroup:
    name: str
    nodes: tuple
    proc: subprocess.Popen
    channel: _Channel
    pgid: int
    port: Optional[int] = None
    status: str = "spawned"
    exit_code: Optional[int] = None
    report: dict = field(default_factory=dict)

    @property
    def pid(self) -> int:
        return self.proc.pid


class RunHandle:
    """A live run: child groups (or one in-process host) plus teardown."""

    def __init__(self, run_id: str, variant: str, isolation: IsolationDriver, trace_dir: Path):
        self.run_id = run_id
        self.variant = variant
        self.isolation = isolation
        self.trace_dir = Path(trace_dir)
        self.start_ts = now_ns()
        self.groups: dict[str, ChildGroup] = {}
        self.local = None
        self.local_group: Optional[str] = None
        self.placement: dict[str, str] = {}
        self.reports: dict[str, dict] = {}
        self.orphans: list[int] = []
        self._torn_down = False
        self._local_started = False

    @property
    def warnings(self) -> list:
        return self.isolation.warnings

    @property
    def pgids(self) -> list[int]:
        return [g.pgid for g in self.groups.values()]

    def processes(self) -> list[tuple[int, str]]:
        """(pid, group) of every live process of this run."""
        out = [(g.pid, g.name) for g in self.groups.values() if g.proc.poll() is None]
        if self.local is not None:
            out.append((os.getpid(), self.local_group))
        return out

    def node_sets(self) -> dict[str, tuple]:
        out = {name: g.nodes for name, g in self.groups.items()}
        if self.local is not None:
            out[self.local_group] = tuple(self.local.node_names)
        return out

    def _peers(self) -> dict:
        return {name: ("127.0.0.1", g.port) for name, g in self.groups.items()}

    def start(self) -> None:
        peers = self._peers()
        for g in self.groups.values():
            g.channel.send({"cmd": "connect", "placement": self.placement,
                            "peers": {k: list(v) for k, v in peers.items()}})
        for g in self.groups.values():
            g.channel.expect("connected", REPLY_TIMEOUT)
        if self.local is not None:
            self.local.connect(self.placement, peers)
        for g in self.groups.values():
            g.channel.send({"cmd": "start"})
        if self.local is not None:
            self.local.start()
            self._local_started = True
        for g in self.groups.values():
            g.channel.expect("running", REPLY_TIMEOUT)
            g.status = "running"

    def go(self, group: str, timeout: float = REPLY_TIMEOUT, **params) -> dict:
        if self.local is not None and group == self.local_group:
            return self.local.go(**params)
        g = self.groups[group]
        g.channel.send({"cmd": "go", "params": params})
        return g.channel.expect("result", timeout)["result"]

    def stop(self, timeout: float = REPLY_TIMEOUT) -> dict[str, dict]:
        """Graceful stop: every group flushes its trace and exits."""
        try:
            for g in self.groups.values():
                if g.proc.poll() is None:
                    try:
                        g.channel.send({"cmd": "stop"})
                    except (BrokenPipeError, OSError):
                        pass
            if self.local is not None:
                if self._local_started:
                    self.local.stop()
                path = self.local.flush(self.trace_dir)
                self.reports[self.local_group] = {"trace": str(path), **self.local.status(), "exit_code": 0}
            for g in self.groups.values():
                try:
                    msg = g.channel.expect("stopped", timeout)
                    g.report = msg
                except LaunchError as exc:
                    g.report = {"error": str(exc)}
                try:
                    g.exit_code = g.proc.wait(timeout=timeout)
                except subprocess.TimeoutExpired:
                    pass
                g.status = "stopped"
                self.reports[g.name] = {**g.report, "exit_code": g.exit_code}
        finally:
            self.teardown()
        return self.reports

    def teardown(self) -> list[int]:
        """Reap every spawned group; returns process groups still alive."""
        if self._torn_down:
            return self.orphans
        self._torn_down = True
        for g in self.groups.values():
            _kill_group(g)
        if self.local is not None and self._local_started and self.local_group not in self.reports:
            self.local.stop()
        self.isolation.cleanup()
        self.orphans = [pgid for pgid in self.pgids if group_alive(pgid)]
        if self.orphans:
            log.error("process groups survived teardown: %s", self.orphans)
        return self.orphans

    @property
    def trace_paths(self) -> list[Path]:
        return [Path(r["trace"]) for r in self.reports.values() if r.get("trace")]

    def __enter__(self) -> "RunHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.teardown()


def group_alive(pgid: int) -> bool:
    try:
        os.killpg(pgid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _kill_group(g: ChildGroup, grace: float = 5.0) -> None:
    proc = g.proc
    if proc.poll() is None:
        try:
            os.killpg(g.pgid, signal.SIGTERM)
        except ProcessLookupError:
            pass
        try:
            proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            pass
    # anything left in the group (including stray descendants) gets SIGKILL
    if group_alive(g.pgid):
        try:
            os.killpg(g.pgid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        try:
            proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            log.error("child %s (pid %d) did not die", g.name, proc.pid)
        deadline = time.monotonic() + grace
        while group_alive(g.pgid) and time.monotonic() < deadline:
            time.sleep(0.01)
    if g.exit_code is None:
        g.exit_code = proc.returncode
    for stream in (proc.stdin, proc.stdout):
        try:
            if stream:
                stream.close()
        except OSError:
            pass


def _child_env(trace_dir: Path) -> dict:
    env = dict(os.environ)
    env[TRACE_DIR_ENV] = str(trace_dir)
    src = str(Path(chainbench.__file__).resolve().parent.parent)
    env["PYTHONPATH"] = src + (os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else "")
    return env


def launch_groups(groups: list[GroupSpec], *, run_id: str, role: str, plan: DeploymentPlan,
                  trace_dir: Path, local_factory: Optional[Callable] = None,
                  isolation: Optional[IsolationDriver] = None, log_dir: Optional[Path] = None,
                  seed: int = 0, start: bool = True) -> RunHandle:
    """Spawn one child per group (or host the single group in-process) and wire them."""
    isolation = isolation or IsolationDriver.probe()
    try:
        isolation.check(plan)
    except IsolationUnavailable as exc:
        raise LaunchError(str(exc), EXIT_RUNTIME) from exc
    trace_dir = Path(trace_dir)
    trace_dir.mkdir(parents=True, exist_ok=True)
    handle = RunHandle(run_id, plan.variant, isolation, trace_dir)
    for gs in groups:
        for node in gs.nodes:
            handle.placement[node] = gs.name

    if plan.variant == "in_process":
        if len(groups) != 1 or local_factory is None:
            raise LaunchError("in_process deployment hosts exactly one local group")
        handle.local_group = groups[0].name
        handle.local = local_factory(groups[0])
        if start:
            handle.start()
        return handle

    env = _child_env(trace_dir)
    try:
        for gs in groups:
            cmd = [sys.executable, "-m", "chainbench", "--role", role, "--run-id", run_id,
                   "--group", gs.name, "--seed", str(seed), *gs.args]
            cpus = isolation.cpus_arg(plan, gs.name)
            if cpus:
                cmd += ["--cpus", cpus]
            err = subprocess.DEVNULL
            if log_dir is not None:
                Path(log_dir).mkdir(parents=True, exist_ok=True)
                err = open(Path(log_dir) / f"{run_id}-{gs.name}.log", "w")
            try:
                proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=err,
                                        text=True, env=env, start_new_session=True, bufsize=1)
            except OSError as exc:
                raise LaunchError(f"cannot spawn group {gs.name}: {exc}") from exc
            finally:
                if err is not subprocess.DEVNULL:
                    err.close()
            g = ChildGroup(gs.name, tuple(gs.nodes), proc, _Channel(proc, gs.name), proc.pid)
            handle.groups[gs.name] = g
            if plan.isolation == "process_group_with_limits":
                try:
                    isolation.apply_limits(f"chainbench-{run_id}-{gs.name}", proc.pid, plan.limits)
                except (OSError, IsolationUnavailable) as exc:
                    raise LaunchError(f"cannot apply limits to {gs.name}: {exc}") from exc
        for g in handle.groups.values():
            msg = g.channel.expect("bound", BOUND_TIMEOUT)
            g.port = msg["port"]
            g.status = "bound"
            if tuple(msg["nodes"]) != g.nodes:
                raise LaunchError(f"group {g.name} hosts {msg['nodes']}, expected {list(g.nodes)}")
        if start:
            handle.start()
    except BaseException:
        handle.teardown()
        raise
    return handle


def workload_groups(spec: WorkloadSpec, plan: DeploymentPlan, spec_path: Path) -> list[GroupSpec]:
    manifest = spec.manifest
    if plan.variant == "in_process":
        return [GroupSpec("local", tuple(spec.node_names))]
    if plan.variant == "single_group":
        args = ["--spec", str(spec_path)]
        for m in manifest.module_names:
            args += ["--module", m]
        nodes = tuple(n for m in manifest.module_names for n in manifest.nodes_of(m))
        return [GroupSpec("all", nodes, tuple(args))]
    return [GroupSpec(m, tuple(manifest.nodes_of(m)), ("--spec", str(spec_path), "--module", m))
            for m in manifest.module_names]


def launch(spec: WorkloadSpec, plan: DeploymentPlan, *, run_id: str, trace_dir: Path,
           seed: int = 0, isolation: Optional[IsolationDriver] = None,
           log_dir: Optional[Path] = None) -> RunHandle:
    """Start ``spec`` under ``plan``; returns a running handle."""
    from ..workload import NodeHost

    plan.check(spec.manifest)
    trace_dir = Path(trace_dir)
    trace_dir.mkdir(parents=True, exist_ok=True)
    spec_path = trace_dir / f"{run_id}.spec"
    spec_path.write_text(render_workload_spec(spec))
    groups = workload_groups(spec, plan, spec_path)

    def local(gs: GroupSpec):
        return NodeHost(spec, gs.nodes, run_id, group=gs.name, seed=seed)

    return launch_groups(groups, run_id=run_id, role="node-host", plan=plan, trace_dir=trace_dir,
                         local_factory=local, isolation=isolation, log_dir=log_dir, seed=seed)
