"""Independent oracles used by the tests.

`simulate_chain` is a discrete-event model of a keep-last-1 chain. Every
message carries its lineage (the partial paths it extends), so the simulator
knows the exact set of complete and truncated paths without ever looking at
the trace it writes.
"""
from __future__ import annotations

import heapq
import itertools
import math
import random
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from chainbench.analysis import HopRecord, PathInstance
from chainbench.config import resolve_chain
from chainbench.model import (
    ChainHop,
    ChainSpec,
    ModuleManifest,
    NodeSpec,
    PublicationSpec,
    SubscriptionSpec,
    TimerSpec,
    WorkloadSpec,
)
from chainbench.tracing import (
    PUBLISH,
    SUB_CB_END,
    SUB_CB_START,
    TIMER_CB_END,
    TIMER_CB_START,
    Recorder,
)

MS = 1_000_000
SENSOR = "Sensor"
SENSOR_TOPIC = "/s"


@dataclass
class _Node:
    name: str
    index: int
    topic_in: str
    topic_out: str
    timer_period: int | None
    compute: tuple  # (lo, hi) ns
    queue: object = None
    ready: deque = field(default_factory=deque)
    busy_until: int = 0
    stored: list | None = None  # [topic, seq, lineage, consumed]
    seq: int = 0


@dataclass
class Schedule:
    trace: object
    chain: ChainSpec
    spec: WorkloadSpec
    truth: list
    sensor_publishes: int
    evictions: int = 0  # keep-last overwrites of an undispatched input


def chain_shape(rng: random.Random, n_hops: int) -> list[bool]:
    """Per node: True when the node has a timer hop after its subscription."""
    shape, hops = [], 0
    while hops < n_hops:
        timer = n_hops - hops >= 2 and rng.random() < 0.3
        shape.append(timer)
        hops += 2 if timer else 1
    return shape


def simulate_chain(rng: random.Random, n_hops: int, n_sensor: int = 30, *,
                   sensor_period: int | None = None, shape: list | None = None,
                   compute: tuple | None = None, comm: tuple = (50_000, 2 * MS),
                   timer_periods: tuple = (5 * MS, 60 * MS)) -> Schedule:
    shape = shape if shape is not None else chain_shape(rng, n_hops)
    sensor_period = sensor_period or rng.randint(5 * MS, 50 * MS)
    nodes = []
    for i, has_timer in enumerate(shape):
        lo = rng.randint(100_000, 5 * MS) if compute is None else compute[0]
        hi = lo + rng.randint(0, 10 * MS) if compute is None else compute[1]
        nodes.append(_Node(f"N{i}", i, SENSOR_TOPIC if i == 0 else f"/t{i - 1}", f"/t{i}",
                           rng.randint(*timer_periods) if has_timer else None, (lo, hi)))

    node_specs = [NodeSpec(SENSOR, timers=(TimerSpec(sensor_period, "tick"),),
                           publications=(PublicationSpec(SENSOR_TOPIC, 0, "tick", on_timer=True),))]
    hops = []
    for n in nodes:
        if n.timer_period:
            node_specs.append(NodeSpec(
                n.name, timers=(TimerSpec(n.timer_period, "tick", reads=n.topic_in),),
                subscriptions=(SubscriptionSpec(n.topic_in, "on_in"),),
                publications=(PublicationSpec(n.topic_out, 0, "tick", on_timer=True),)))
            hops += [ChainHop(n.name, "subscription"), ChainHop(n.name, "timer")]
        else:
            node_specs.append(NodeSpec(
                n.name, subscriptions=(SubscriptionSpec(n.topic_in, "on_in"),),
                publications=(PublicationSpec(n.topic_out, 0, "on_in"),)))
            hops.append(ChainHop(n.name, "subscription"))
    spec = WorkloadSpec(tuple(node_specs), ModuleManifest())
    chain = resolve_chain(spec, ChainSpec(tuple(hops), SENSOR_TOPIC))

    rec = Recorder("sim", pid=1)
    truth: list[PathInstance] = []
    evictions = 0
    heap: list = []
    order = itertools.count()

    def push(t, kind, *data):
        heapq.heappush(heap, (t, next(order), kind, data))

    def incomplete(lineage):
        for seq, ts, recs in lineage:
            truth.append(PathInstance(seq, ts, recs, False))

    def publish_from(node, t, lineage):
        node.seq += 1
        rec.record(node.name, PUBLISH, node.topic_out, node.seq, t=t)
        if node.index + 1 < len(nodes):
            push(t + rng.randint(*comm), "arrive", node.index + 1, (node.topic_out, node.seq, lineage))
        else:
            for seq, ts, recs in lineage:
                truth.append(PathInstance(seq, ts, recs, True))

    def dispatch(node, t):
        if node.busy_until > t or not node.ready:
            return
        task = node.ready.popleft()
        start = t
        c = rng.randint(*node.compute)
        if task == "sub":
            topic, seq, lineage = node.queue
            node.queue = None
            rec.record(node.name, SUB_CB_START, topic, seq, t=start)
            if node.timer_period:
                end = start + c
                rec.record(node.name, SUB_CB_END, topic, seq, t=end)
                if node.stored is not None and node.stored[3] == 0:
                    incomplete(node.stored[2])
                hop = HopRecord(node.name, "subscription", start, end, None)
                node.stored = [topic, seq, [(s, ts, r + (hop,)) for s, ts, r in lineage], 0]
            else:
                pub = start + c
                end = pub + 1000
                hop = HopRecord(node.name, "subscription", start, end, pub)
                publish_from(node, pub, [(s, ts, r + (hop,)) for s, ts, r in lineage])
                rec.record(node.name, SUB_CB_END, topic, seq, t=end)
        else:
            stored = node.stored
            if stored is None:
                rec.record(node.name, TIMER_CB_START, t=start)
            else:
                rec.record(node.name, TIMER_CB_START, stored[0], stored[1], t=start)
            pub = start + c
            end = pub + 1000
            lineage = []
            if stored is not None:
                stored[3] += 1
                hop = HopRecord(node.name, "timer", start, end, pub)
                lineage = [(s, ts, r + (hop,)) for s, ts, r in stored[2]]
            publish_from(node, pub, lineage)
            rec.record(node.name, TIMER_CB_END, t=end)
        node.busy_until = end
        push(end, "free", node.index)

    t_stop = n_sensor * sensor_period + 200 * MS
    for i in range(n_sensor):
        push(sensor_period * (i + 1), "sensor", i + 1)
    for n in nodes:
        if n.timer_period:
            push(rng.randint(1, n.timer_period), "timer", n.index)

    while heap:
        t, _, kind, data = heapq.heappop(heap)
        if kind == "sensor":
            seq = data[0]
            rec.record(SENSOR, PUBLISH, SENSOR_TOPIC, seq, t=t)
            push(t + rng.randint(*comm), "arrive", 0, (SENSOR_TOPIC, seq, [(seq, t, ())]))
        elif kind == "arrive":
            node = nodes[data[0]]
            if node.queue is not None:
                evictions += 1
                incomplete(node.queue[2])  # keep-last eviction
            node.queue = data[1]
            if "sub" not in node.ready:
                node.ready.append("sub")
            dispatch(node, t)
        elif kind == "timer":
            node = nodes[data[0]]
            if "timer" not in node.ready:
                node.ready.append("timer")
            dispatch(node, t)
            if t + node.timer_period <= t_stop:
                push(t + node.timer_period, "timer", node.index)
        else:
            dispatch(nodes[data[0]], t)

    for n in nodes:
        if n.stored is not None and n.stored[3] == 0:
            incomplete(n.stored[2])
    return Schedule(rec.snapshot(), chain, spec, truth, n_sensor, evictions)


# -- synthetic complete paths -----------------------------------------------------

def random_complete_path(rng: random.Random, n_hops: int, seq: int = 1):
    """A complete path plus its ground-truth (e2e, idle, comm, compute)."""
    t = rng.randint(0, 10**12)
    sensor_ts = t
    hops = []
    idle = comm = comp = 0
    prev_is_sub_to_timer = False
    for i in range(n_hops):
        timer = prev_is_sub_to_timer
        if timer:
            gap = rng.randint(0, 50 * MS)
            idle += gap
        else:
            gap = rng.randint(0, 5 * MS)
            comm += gap
        start = t + gap
        work = rng.randint(0, 20 * MS)
        comp += work
        # a subscription hop can hand its input to a same-node timer hop next
        feeds_timer = not timer and i + 1 < n_hops and rng.random() < 0.3
        if feeds_timer:
            end = start + work
            hops.append(HopRecord(f"N{i}", "subscription", start, end, None))
            t = end
        else:
            pub = start + work
            end = pub + rng.randint(0, 100_000)
            hops.append(HopRecord(f"N{i}", "timer" if timer else "subscription", start, end, pub))
            t = pub
        prev_is_sub_to_timer = feeds_timer
    last = hops[-1]
    final = last.publish_ts if last.publish_ts is not None else last.end
    return PathInstance(seq, sensor_ts, tuple(hops), True), (final - sensor_ts, idle, comm, comp)


# -- statistics ------------------------------------------------------------------------

def brute_summary(xs) -> dict:
    """Moments via exact rational arithmetic, quantiles by hand."""
    n = len(xs)
    fr = [Fraction(x) for x in xs]
    mean = sum(fr) / n
    d = [x - mean for x in fr]
    m2 = sum(v * v for v in d) / n
    m3 = sum(v ** 3 for v in d) / n
    m4 = sum(v ** 4 for v in d) / n
    std = math.sqrt(m2 * n / (n - 1)) if n > 1 else 0.0
    skew = float(m3) / float(m2) ** 1.5 if n >= 3 and m2 > 0 else None
    kurt = float(m4 / (m2 * m2)) - 3 if n >= 4 and m2 > 0 else None
    s = sorted(xs)

    def q(p):
        pos = p * (n - 1)
        lo = math.floor(pos)
        hi = min(lo + 1, n - 1)
        return s[lo] + (s[hi] - s[lo]) * (pos - lo)

    return {"mean": float(mean), "std": std, "skew": skew, "kurtosis": kurt, "min": s[0],
            "q25": q(0.25), "q50": q(0.5), "q75": q(0.75), "p99": q(0.99), "max": s[-1], "n": n}


def brute_jitter(xs) -> float:
    total = 0.0
    for i in range(1, len(xs)):
        total += abs(xs[i] - xs[i - 1])
    return total / (len(xs) - 1)


def brute_histogram(xs, w) -> dict:
    counts: dict = {}
    for x in xs:
        k = math.floor(x / w)
        counts[k] = counts.get(k, 0) + 1
    return counts
