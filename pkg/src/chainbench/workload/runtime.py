"""Node runtime: timers and subscription callbacks with synthetic compute."""
from __future__ import annotations

import logging
import random
import threading
import time
from typing import Optional

from ..middleware import Middleware, TimerService
from ..model import NodeSpec, TimerSpec
from ..tracing import NODE_READY, TIMER_CB_END, TIMER_CB_START, now_ns

log = logging.getLogger(__name__)


def busy_compute(duration_ns: int) -> int:
    """Spin the CPU for at least ``duration_ns``; returns the elapsed ns."""
    if duration_ns < 0:
        raise ValueError("duration must be >= 0")
    clock = time.perf_counter_ns
    start = clock()
    if duration_ns == 0:
        return clock() - start
    end = start + duration_ns
    now = start
    while now < end:
        now = clock()
    return now - start


class _TimerTask:
    def __init__(self, runtime: "NodeRuntime", spec: TimerSpec):
        self.runtime = runtime
        self.spec = spec
        self.reads = runtime.spec.timer_reads(spec)
        self.fired = 0
        self.targets: list[int] = []
        self.handle = None

    def on_fire(self, target: int) -> None:
        self.fired += 1
        if self.runtime.keep_targets:
            self.targets.append(target)
        self.runtime.strand.post(self)

    def run(self) -> None:
        self.runtime._run_timer(self)


class NodeRuntime:
    """Executes one `NodeSpec` on a shared middleware/executor.

    Callbacks of a node are serialized through its executor strand. Each
    callback burns compute drawn from the node's `ComputeModel`, then
    publishes every publication it triggers. Timer callbacks record which
    stored input (topic, seq) they consumed.
    """

    def __init__(self, spec: NodeSpec, middleware: Middleware, timers: TimerService,
                 rng_seed: int = 0, payloads: Optional[dict] = None, keep_targets: bool = False):
        self.spec = spec
        self.mw = middleware
        self.timer_service = timers
        self.rng = random.Random(rng_seed)
        self.strand = middleware.executor.strand(spec.name)
        self.keep_targets = keep_targets
        self.failed = False
        self.errors = 0
        self.compute_log: list[int] = []
        self._latest: dict[str, int] = {}
        self._pubs: dict[str, list] = {}
        self._payload = {}
        for pub in spec.publications:
            size = (payloads or {}).get(pub.topic, pub.payload_size)
            self._payload[pub.topic] = bytes(size)
        self._timers = [_TimerTask(self, t) for t in spec.timers]
        self.subscriptions = []
        self.started = False
        self._is_setup = False

    @property
    def name(self) -> str:
        return self.spec.name

    def setup(self) -> None:
        if self._is_setup:
            return
        self._is_setup = True
        for pub in self.spec.publications:
            handle = self.mw.advertise(self.name, pub.topic)
            self._pubs.setdefault(pub.callback, []).append(handle)
        for sub in self.spec.subscriptions:
            cb = self._make_sub_callback(sub.topic, sub.callback)
            self.subscriptions.append(self.mw.subscribe(self.name, sub.topic, sub.qos, cb, self.strand))

    def start(self, t0: Optional[int] = None) -> None:
        self.setup()
        t0 = now_ns() if t0 is None else t0
        for task in self._timers:
            task.handle = self.timer_service.add(task.spec.period_ns, task.on_fire, t0)
        self.started = True
        self.mw.recorder.record(self.name, NODE_READY)

    def stop(self) -> None:
        for task in self._timers:
            if task.handle is not None:
                task.handle.cancel()
        self.started = False

    def _make_sub_callback(self, topic: str, callback: str):
        def on_message(env) -> None:
            self._latest[topic] = env.seq
            self._work(callback)
        on_message.__name__ = callback
        return on_message

    def _work(self, callback: str) -> None:
        try:
            d = self.spec.compute.sample(self.rng)
            self.compute_log.append(d)
            busy_compute(d)
            for handle in self._pubs.get(callback, ()):
                handle.publish(self._payload[handle.topic])
        except Exception:
            self.errors += 1
            self.failed = True
            log.exception("node %s callback %s failed", self.name, callback)

    def _run_timer(self, task: _TimerTask) -> None:
        rec = self.mw.recorder
        seq = self._latest.get(task.reads) if task.reads is not None else None
        if seq is None:
            rec.record(self.name, TIMER_CB_START)
        else:
            rec.record(self.name, TIMER_CB_START, task.reads, seq)
        try:
            self._work(task.spec.callback)
        finally:
            rec.record(self.name, TIMER_CB_END)

    def timer_tasks(self) -> list:
        return list(self._timers)


def run_node(runtime: NodeRuntime, stop: threading.Event) -> None:
    """Run ``runtime`` until ``stop`` is set."""
    runtime.start()
    try:
        stop.wait()
    finally:
        runtime.stop()
