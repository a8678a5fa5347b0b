from __future__ import annotations

import zlib
from pathlib import Path
from typing import Iterable, Optional

from ..middleware import Middleware, TimerService, routes_for, wire
from ..model import WorkloadSpec
from ..tracing import DEFAULT_CAPACITY, Recorder
from .runtime import NodeRuntime


def node_seed(seed: int, node: str) -> int:
    return (seed * 1_000_003) ^ zlib.crc32(node.encode())


class NodeHost:
    """All nodes of one process group on a shared middleware and executor."""

    def __init__(self, spec: WorkloadSpec, nodes: Iterable[str], run_id: str, *, group: str = "local",
                 workers: int = 8, seed: int = 0, trace_capacity: int = DEFAULT_CAPACITY,
                 tracing: bool = True):
        self.spec = spec
        self.group = group
        self.recorder = Recorder(run_id, capacity=trace_capacity, enabled=tracing)
        self.mw = Middleware(recorder=self.recorder, topics=spec.topics(), group=group, workers=workers)
        self.timers = TimerService(name=f"timers-{group}")
        self.runtimes = [
            NodeRuntime(spec.node(name), self.mw, self.timers, rng_seed=node_seed(seed, name))
            for name in nodes
        ]

    @property
    def node_names(self) -> list[str]:
        return [rt.name for rt in self.runtimes]

    def bind(self) -> int:
        return self.mw.bind()

    def connect(self, placement: dict, peers: dict) -> None:
        wire(self.mw, routes_for(self.spec, placement, self.group), peers)

    def start(self) -> None:
        for rt in self.runtimes:
            rt.setup()
        self.mw.start()
        self.timers.start()
        for rt in self.runtimes:
            rt.start()

    def stop(self) -> None:
        for rt in self.runtimes:
            rt.stop()
        self.timers.stop()
        self.mw.close()

    def flush(self, directory: Optional[Path] = None) -> Path:
        from ..tracing import default_trace_path

        return self.recorder.flush(default_trace_path(self.recorder.run_id, self.recorder.pid, directory))

    @property
    def failed_nodes(self) -> list[str]:
        return [rt.name for rt in self.runtimes if rt.failed]

    def status(self) -> dict:
        return {"failed": self.failed_nodes, "dropped": self.recorder.dropped_count}

    def go(self, **params) -> dict:
        raise NotImplementedError("node hosts run autonomously once started")
