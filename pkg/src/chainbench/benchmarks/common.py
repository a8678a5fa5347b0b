"""Shared plumbing for the two-node benchmark graphs."""
from __future__ import annotations

import re
from pathlib import Path
from typing import Optional

from ..config import ConfigError
from ..middleware import DeliveryMode, Middleware, routes_for, wire
from ..model import DeploymentPlan, WorkloadSpec
from ..orchestrator import GroupSpec
from ..tracing import Recorder, default_trace_path

KB = 1024
MB = 1024 * KB

_SIZE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(b|kb|kib|mb|mib)?\s*$", re.IGNORECASE)
_UNITS = {None: 1, "b": 1, "kb": KB, "kib": KB, "mb": MB, "mib": MB}


def parse_size(text: str) -> int:
    """``"1KB"`` -> 1024, ``"8MB"`` -> 8388608; plain integers are bytes."""
    m = _SIZE.match(str(text))
    if not m:
        raise ConfigError(f"bad size {text!r}")
    unit = m.group(2).lower() if m.group(2) else None
    value = float(m.group(1)) * _UNITS[unit]
    if value != int(value):
        raise ConfigError(f"size {text!r} is not a whole number of bytes")
    return int(value)


def format_size(n: int) -> str:
    if n >= MB and n % MB == 0:
        return f"{n // MB}MB"
    if n >= KB and n % KB == 0:
        return f"{n // KB}KB"
    return f"{n}B"


def delivery_for(mode: str) -> DeliveryMode:
    mode = mode.replace("-", "_")
    if mode == "best_effort":
        return DeliveryMode.best_effort()
    if mode == "reliable":
        return DeliveryMode.reliable_mode()
    raise ConfigError(f"unknown delivery mode {mode!r}")


class BenchHost:
    """Middleware host for a subset of a two-node benchmark graph."""

    def __init__(self, spec: WorkloadSpec, nodes, run_id: str, group: str,
                 delivery: DeliveryMode, tracing: bool):
        self.spec = spec
        self.group = group
        self.nodes = tuple(nodes)
        self.recorder = Recorder(run_id, enabled=tracing)
        self.mw = Middleware(recorder=self.recorder, topics=spec.topics(), group=group,
                             workers=2, delivery=delivery)

    @property
    def node_names(self) -> list[str]:
        return list(self.nodes)

    def bind(self) -> int:
        return self.mw.bind()

    def connect(self, placement: dict, peers: dict) -> None:
        wire(self.mw, routes_for(self.spec, placement, self.group), peers)

    def start(self) -> None:
        self.mw.start()

    def stop(self) -> None:
        self.mw.close()

    def flush(self, directory: Optional[Path] = None) -> Path:
        return self.recorder.flush(default_trace_path(self.recorder.run_id, self.recorder.pid, directory))

    def status(self) -> dict:
        return {"failed": [], "dropped": self.recorder.dropped_count}


def bench_groups(plan: DeploymentPlan, spec: WorkloadSpec, args: tuple) -> list[GroupSpec]:
    names = tuple(spec.node_names)
    if plan.variant == "in_process":
        return [GroupSpec("local", names)]
    if plan.variant == "single_group":
        return [GroupSpec("all", names, args + ("--nodes", ",".join(names)))]
    return [GroupSpec(n, (n,), args + ("--nodes", n)) for n in names]


def group_of(groups: list[GroupSpec], node: str) -> str:
    for g in groups:
        if node in g.nodes:
            return g.name
    raise KeyError(node)
