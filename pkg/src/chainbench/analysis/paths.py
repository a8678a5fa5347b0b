"""Chain path reconstruction from traces and data-age latency decomposition.

A path starts at one publish on the chain's sensor topic. A subscription hop
is linked to its upstream hop by the exact (topic, seq) the upstream callback
published; a timer hop is linked by the (topic, seq) it recorded as consumed.
Timer hops can consume the same input several times, so one sensor sample
may fan out into several paths.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..model import ChainSpec
from ..tracing import (
    PUBLISH,
    SUB_CB_END,
    SUB_CB_START,
    TIMER_CB_END,
    TIMER_CB_START,
    TraceLog,
)

NS_PER_MS = 1_000_000


class ChainUnresolvable(ValueError):
    pass


class IncompletePath(ValueError):
    pass


@dataclass(frozen=True)
class HopRecord:
    node: str
    kind: str  # "subscription" | "timer"
    start: int
    end: int
    publish_ts: Optional[int] = None


@dataclass(frozen=True)
class PathInstance:
    sensor_seq: int
    sensor_ts: int
    hops: tuple[HopRecord, ...]
    complete: bool

    def key(self) -> tuple:
        return (self.sensor_seq, self.sensor_ts, self.hops, self.complete)


@dataclass(frozen=True)
class LatencyBreakdown:
    e2e: int
    idle: int
    communication: int
    compute: int
    per_hop: tuple = ()  # (idle, communication, compute) per hop


@dataclass
class _Callback:
    kind: str
    topic: Optional[str]
    seq: Optional[int]
    start: int
    end: Optional[int] = None
    publishes: list = field(default_factory=list)  # (topic, seq, t)

    def output(self, topic: str) -> Optional[tuple]:
        for pub in self.publishes:
            if pub[0] == topic:
                return pub
        return None


def _index(trace: TraceLog):
    sub_idx: dict[tuple, _Callback] = {}
    timer_idx: dict[tuple, list[_Callback]] = defaultdict(list)
    for node, events in trace.by_node().items():
        current: Optional[_Callback] = None
        for ev in events:
            kind = ev.kind
            if kind == SUB_CB_START or kind == TIMER_CB_START:
                current = _Callback("subscription" if kind == SUB_CB_START else "timer",
                                    ev.topic, ev.seq, ev.t)
                if kind == SUB_CB_START:
                    sub_idx.setdefault((node, ev.topic, ev.seq), current)
                elif ev.topic is not None:
                    timer_idx[(node, ev.topic, ev.seq)].append(current)
            elif kind == PUBLISH:
                if current is not None and current.end is None:
                    current.publishes.append((ev.topic, ev.seq, ev.t))
            elif kind == SUB_CB_END or kind == TIMER_CB_END:
                if current is not None:
                    current.end = ev.t
                current = None
    return sub_idx, timer_idx


def reconstruct_paths(trace: TraceLog, chain: ChainSpec) -> list[PathInstance]:
    """Enumerate every maximal chain path, one or more per sensor publish."""
    if not chain.resolved:
        raise ChainUnresolvable("chain topics are not resolved; run resolve_chain first")
    sensor = chain.sensor_topic
    hops = chain.hops
    n_hops = len(hops)
    sub_idx, timer_idx = _index(trace)
    first = hops[0]
    if not any(key[0] == first.node for key in sub_idx):
        raise ChainUnresolvable(f"trace has no callbacks of the first hop node {first.node!r}")

    sensor_pubs = sorted({(ev.seq, ev.t) for ev in trace.events if ev.kind == PUBLISH and ev.topic == sensor})
    paths: list[PathInstance] = []

    def walk(seq: int, ts: int, i: int, records: tuple, upstream: Optional[tuple],
             consumed: Optional[tuple]) -> None:
        hop = hops[i]
        if hop.is_timer:
            candidates = timer_idx.get((hop.node, consumed[0], consumed[1]), ())
        else:
            inst = sub_idx.get((hop.node, hop.topic, upstream[1]))
            candidates = (inst,) if inst is not None else ()
        if not candidates:
            paths.append(PathInstance(seq, ts, records, False))
            return
        for inst in candidates:
            if inst.end is None:
                paths.append(PathInstance(seq, ts, records, False))
                continue
            out = inst.output(hop.output_topic) if hop.output_topic else None
            rec = HopRecord(hop.node, hop.kind, inst.start, inst.end, out[2] if out else None)
            if hop.output_topic and out is None:
                paths.append(PathInstance(seq, ts, records + (rec,), False))
                continue
            if i == n_hops - 1:
                paths.append(PathInstance(seq, ts, records + (rec,), True))
            elif hops[i + 1].is_timer:
                nxt = consumed if hop.is_timer else (hop.topic, upstream[1])
                walk(seq, ts, i + 1, records + (rec,), None, nxt)
            else:
                walk(seq, ts, i + 1, records + (rec,), out, None)

    for seq, ts in sensor_pubs:
        walk(seq, ts, 0, (), (sensor, seq, ts), None)
    return paths


def decompose(path: PathInstance) -> LatencyBreakdown:
    """Split a complete path's end-to-end latency into idle, communication
    and compute time. The three parts sum to ``e2e`` exactly."""
    if not path.complete or not path.hops:
        raise IncompletePath(f"path for sensor seq {path.sensor_seq} is incomplete")
    idle = comm = comp = 0
    per_hop = []
    prev: Optional[HopRecord] = None
    for hop in path.hops:
        h_idle = h_comm = 0
        if hop.kind == "timer":
            h_idle = hop.start - prev.end
        else:
            upstream = path.sensor_ts if prev is None else prev.publish_ts
            if upstream is None:
                raise IncompletePath("subscription hop without an upstream publish")
            h_comm = hop.start - upstream
        end = hop.publish_ts if hop.publish_ts is not None else hop.end
        h_comp = end - hop.start
        idle += h_idle
        comm += h_comm
        comp += h_comp
        per_hop.append((h_idle, h_comm, h_comp))
        prev = hop
    last = path.hops[-1]
    e2e = (last.publish_ts if last.publish_ts is not None else last.end) - path.sensor_ts
    return LatencyBreakdown(e2e, idle, comm, comp, tuple(per_hop))


def _grouped(paths: Iterable[PathInstance]) -> dict[int, list[PathInstance]]:
    groups: dict[int, list[PathInstance]] = defaultdict(list)
    for p in paths:
        if p.complete:
            groups[p.sensor_seq].append(p)
    return dict(sorted(groups.items()))


def data_age_series(paths: Iterable[PathInstance]) -> list[float]:
    """One sample (ms) per sensor input: the mean e2e of its complete paths."""
    out = []
    for group in _grouped(paths).values():
        total = sum(decompose(p).e2e for p in group)
        out.append(total / len(group) / NS_PER_MS)
    return out


KPI_FIELDS = {"E2E": "e2e", "Idle": "idle", "Communication": "communication", "Computation": "compute"}


def breakdown_series(paths: Iterable[PathInstance]) -> dict[str, list[float]]:
    """Per-sensor-input means of every latency component, keyed by KPI name."""
    out: dict[str, list[float]] = {k: [] for k in KPI_FIELDS}
    for group in _grouped(paths).values():
        parts = [decompose(p) for p in group]
        for kpi, attr in KPI_FIELDS.items():
            out[kpi].append(sum(getattr(b, attr) for b in parts) / len(parts) / NS_PER_MS)
    return out


def path_counts(paths: Iterable[PathInstance]) -> dict[str, int]:
    paths = list(paths)
    complete = sum(p.complete for p in paths)
    return {
        "paths": len(paths),
        "complete": complete,
        "incomplete": len(paths) - complete,
        "sensor_inputs": len({p.sensor_seq for p in paths}),
        "samples": len({p.sensor_seq for p in paths if p.complete}),
    }
