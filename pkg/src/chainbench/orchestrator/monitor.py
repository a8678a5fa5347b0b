"""Ramp-up measurement and periodic per-process CPU/memory sampling."""
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import psutil

from ..tracing import NODE_READY, TraceLog

log = logging.getLogger(__name__)

SAMPLE_INTERVAL = 0.2


@dataclass(frozen=True)
class RampUp:
    duration_ns: Optional[int]
    ready: dict  # node -> ready timestamp
    missing: tuple

    @property
    def complete(self) -> bool:
        return not self.missing

    @property
    def seconds(self) -> Optional[float]:
        return None if self.duration_ns is None else self.duration_ns / 1e9


def measure_rampup(trace: TraceLog, nodes: Iterable[str], launch_ts: int) -> RampUp:
    """Launch-to-last-``node_ready`` time. With nodes missing, the duration is
    None and the missing names are listed."""
    ready: dict[str, int] = {}
    for ev in trace.events:
        if ev.kind == NODE_READY and ev.node not in ready:
            ready[ev.node] = ev.t
    wanted = list(nodes)
    missing = tuple(n for n in wanted if n not in ready)
    if missing or not wanted:
        return RampUp(None, ready, missing)
    return RampUp(max(ready[n] for n in wanted) - launch_ts, ready, ())


@dataclass(frozen=True)
class ProcSample:
    pid: int
    group: str
    cpu_percent: float
    rss_bytes: int


@dataclass(frozen=True)
class ResourceSample:
    t: int  # monotonic ns
    procs: tuple
    skipped: tuple = ()  # pids that vanished mid-sample

    def total_cpu(self) -> float:
        return sum(p.cpu_percent for p in self.procs)

    def total_rss(self) -> int:
        return sum(p.rss_bytes for p in self.procs)


@dataclass
class _Prev:
    t: float
    cpu: float
    proc: psutil.Process


class ResourceSampler:
    """Samples every ``interval`` seconds on a fixed time grid.

    cpu_percent is the CPU time consumed since the previous tick divided by
    the wall time between ticks; 100 means one core fully busy. A pid's first
    tick only primes its counters.
    """

    def __init__(self, targets: Callable[[], Iterable[tuple[int, str]]], interval: float = SAMPLE_INTERVAL):
        if interval <= 0:
            raise ValueError("interval must be positive")
        self.targets = targets
        self.interval = interval
        self.samples: list[ResourceSample] = []
        self._prev: dict[int, _Prev] = {}
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def tick(self) -> Optional[ResourceSample]:
        now = time.monotonic()
        procs, skipped = [], []
        for pid, group in list(self.targets()):
            prev = self._prev.get(pid)
            try:
                p = prev.proc if prev else psutil.Process(pid)
                with p.oneshot():
                    ct = p.cpu_times()
                    cpu = ct.user + ct.system
                    rss = p.memory_info().rss
            except (psutil.NoSuchProcess, psutil.ZombieProcess, psutil.AccessDenied):
                skipped.append(pid)
                self._prev.pop(pid, None)
                continue
            self._prev[pid] = _Prev(now, cpu, p)
            if prev is not None and now > prev.t:
                pct = max(0.0, (cpu - prev.cpu) / (now - prev.t) * 100.0)
                procs.append(ProcSample(pid, group, pct, rss))
        if not procs and not skipped:
            return None
        sample = ResourceSample(time.monotonic_ns(), tuple(procs), tuple(skipped))
        if procs:
            self.samples.append(sample)
        if skipped:
            log.debug("sampler skipped exited pids %s", skipped)
        return sample

    def _loop(self) -> None:
        t0 = time.monotonic()
        k = 0
        while not self._stop.is_set():
            self.tick()
            k += 1
            delay = t0 + k * self.interval - time.monotonic()
            if delay < 0:
                # fell behind: skip to the next grid point
                k += int(-delay // self.interval) + 1
                delay = t0 + k * self.interval - time.monotonic()
            if self._stop.wait(max(0.0, delay)):
                break

    def start(self) -> "ResourceSampler":
        if self._thread is None:
            self._stop.clear()
            self._thread = threading.Thread(target=self._loop, name="sampler", daemon=True)
            self._thread.start()
        return self

    def stop(self) -> list[ResourceSample]:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(5.0)
            self._thread = None
        return self.samples

    def __enter__(self) -> "ResourceSampler":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def intervals(self) -> list[float]:
        ts = [s.t for s in self.samples]
        return [(b - a) / 1e9 for a, b in zip(ts, ts[1:])]

    def mean_total_cpu(self) -> Optional[float]:
        if not self.samples:
            return None
        return sum(s.total_cpu() for s in self.samples) / len(self.samples)


def sample_resources(handle, interval: float = SAMPLE_INTERVAL) -> ResourceSampler:
    """Start a sampler over every live process of ``handle``."""
    return ResourceSampler(handle.processes, interval).start()
