"""Event recording with bounded per-producer buffers and a line-oriented
trace file format.

File layout::

    #chainbench-trace v1 run=<run_id> clock=monotonic
    v1 <t_ns> <pid> <node> <kind> [topic seq]
    ...
    #dropped=<n>

Each process writes its own file; `load_run` merges all files of one run.
"""
from __future__ import annotations

import heapq
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

FORMAT_VERSION = "v1"
TRACE_DIR_ENV = "CHAINBENCH_TRACE_DIR"
DEFAULT_CAPACITY = 1 << 20

PUBLISH = "publish"
SUB_CB_START = "sub_cb_start"
SUB_CB_END = "sub_cb_end"
TIMER_CB_START = "timer_cb_start"
TIMER_CB_END = "timer_cb_end"
NODE_READY = "node_ready"
KINDS = (PUBLISH, SUB_CB_START, SUB_CB_END, TIMER_CB_START, TIMER_CB_END, NODE_READY)
_WITH_TOPIC = (PUBLISH, SUB_CB_START, SUB_CB_END)

now_ns = time.monotonic_ns


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    t: int
    pid: int
    node: str
    kind: str
    topic: Optional[str] = None
    seq: Optional[int] = None
    run_id: str = ""
    # position within the producer's emission order
    index: int = 0


@dataclass
class TraceLog:
    events: list
    dropped_count: int = 0
    run_id: str = ""

    def __len__(self) -> int:
        return len(self.events)

    def by_node(self) -> dict[str, list[TraceEvent]]:
        out: dict[str, list[TraceEvent]] = {}
        for ev in self.events:
            out.setdefault(ev.node, []).append(ev)
        for evs in out.values():
            evs.sort(key=lambda e: (e.pid, e.index))
        return out


def _sort_key(ev: TraceEvent) -> tuple:
    return (ev.t, ev.pid, ev.index, ev.node)


class Recorder:
    """Collects events into one bounded buffer per producer.

    ``record`` never blocks on a drainer; once a producer's buffer holds
    ``capacity`` events further events are dropped and counted.
    """

    def __init__(self, run_id: str = "run", capacity: int = DEFAULT_CAPACITY,
                 enabled: bool = True, pid: Optional[int] = None):
        self.run_id = run_id
        self.capacity = capacity
        self.enabled = enabled
        self.pid = os.getpid() if pid is None else pid
        self._buffers: dict[str, list] = {}
        self._dropped = 0
        self._lock = threading.Lock()

    @property
    def dropped_count(self) -> int:
        return self._dropped

    def record(self, node: str, kind: str, topic: Optional[str] = None,
               seq: Optional[int] = None, t: Optional[int] = None) -> None:
        if not self.enabled:
            return
        buf = self._buffers.get(node)
        if buf is None:
            with self._lock:
                buf = self._buffers.setdefault(node, [])
        if len(buf) >= self.capacity:
            with self._lock:
                self._dropped += 1
            return
        buf.append((now_ns() if t is None else t, kind, topic, seq))

    def producers(self) -> list[str]:
        return list(self._buffers)

    def snapshot(self) -> TraceLog:
        events = []
        for node, buf in list(self._buffers.items()):
            for i, (t, kind, topic, seq) in enumerate(list(buf)):
                events.append(TraceEvent(t, self.pid, node, kind, topic, seq, self.run_id, i))
        events.sort(key=_sort_key)
        return TraceLog(events, self._dropped, self.run_id)

    def flush(self, sink: Union[str, Path, None] = None) -> Path:
        """Write the merged log to ``sink`` (default: trace dir from env)."""
        if sink is None:
            sink = default_trace_path(self.run_id, self.pid)
        flush(self.snapshot(), sink)
        return Path(sink)


def default_trace_path(run_id: str, pid: Optional[int] = None, directory=None) -> Path:
    directory = Path(directory or os.environ.get(TRACE_DIR_ENV) or ".")
    return directory / f"{run_id}-{pid if pid is not None else os.getpid()}.trace"


def _format_event(ev: TraceEvent) -> str:
    line = f"{FORMAT_VERSION} {ev.t} {ev.pid} {ev.node} {ev.kind}"
    if ev.topic is not None:
        line += f" {ev.topic} {ev.seq}"
    return line


def flush(log: TraceLog, sink: Union[str, Path]) -> int:
    """Write ``log`` to ``sink``; returns the number of event lines."""
    events = sorted(log.events, key=_sort_key)
    path = Path(sink)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"#chainbench-trace {FORMAT_VERSION} run={log.run_id} clock=monotonic\n")
        for ev in events:
            fh.write(_format_event(ev) + "\n")
        fh.write(f"#dropped={log.dropped_count}\n")
    return len(events)


def load_trace(source: Union[str, Path]) -> TraceLog:
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TraceFormatError(f"cannot read trace {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#chainbench-trace"):
        raise TraceFormatError(f"{path}: missing trace header")
    header = lines[0].split()
    if len(header) < 2 or header[1] != FORMAT_VERSION:
        raise TraceFormatError(f"{path}: unsupported trace version {header[1:2]}")
    run_id = ""
    for field_ in header[2:]:
        if field_.startswith("run="):
            run_id = field_[4:]
    dropped = 0
    counters: dict[tuple[int, str], int] = {}
    events: list[TraceEvent] = []
    errors: list[str] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("#dropped="):
                dropped = int(line[len("#dropped="):])
            continue
        parts = line.split()
        try:
            if parts[0] != FORMAT_VERSION:
                raise ValueError(f"version {parts[0]!r}")
            t, pid, node, kind = int(parts[1]), int(parts[2]), parts[3], parts[4]
            if kind not in KINDS:
                raise ValueError(f"unknown kind {kind!r}")
            topic = seq = None
            if len(parts) == 7:
                topic, seq = parts[5], int(parts[6])
            elif len(parts) != 5 or kind in _WITH_TOPIC:
                raise ValueError("wrong field count")
        except (ValueError, IndexError) as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        key = (pid, node)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        events.append(TraceEvent(t, pid, node, kind, topic, seq, run_id, idx))
    if errors:
        raise TraceFormatError(f"{path}: malformed lines: " + "; ".join(errors[:20]))
    return TraceLog(events, dropped, run_id)


def merge(logs: Iterable[TraceLog]) -> TraceLog:
    logs = list(logs)
    events = list(heapq.merge(*(sorted(l.events, key=_sort_key) for l in logs), key=_sort_key))
    run_id = logs[0].run_id if logs else ""
    return TraceLog(events, sum(l.dropped_count for l in logs), run_id)


def load_run(directory: Union[str, Path], run_id: str) -> TraceLog:
    files = sorted(
        f for f in Path(directory).glob(f"{run_id}-*.trace")
        if f.name[len(run_id) + 1:-len(".trace")].isdigit()
    )
    if not files:
        raise TraceFormatError(f"no trace files for run {run_id!r} in {directory}")
    return merge(load_trace(f) for f in files)
