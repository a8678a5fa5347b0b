"""Frame-rate benchmark: a playback node feeds frames to a worker that burns
a fixed compute time and publishes a result.

Rate mode publishes on a fixed grid of 1/r seconds. Max-throughput mode is
closed loop: the next frame goes out as soon as the previous result arrives.
Latency is frame publish to result publish, taken from the trace.
"""
from __future__ import annotations

import math
import statistics
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from ..analysis import data_age_series, jitter, reconstruct_paths, summarize
from ..config import resolve_chain
from ..middleware import MessageEnvelope
from ..model import (
    ChainHop,
    ChainSpec,
    DeploymentPlan,
    ModuleManifest,
    NodeSpec,
    PublicationSpec,
    QosPolicy,
    SubscriptionSpec,
    TimerSpec,
    WorkloadSpec,
)
from ..orchestrator import ResourceSampler, launch_groups
from ..tracing import PUBLISH, SUB_CB_START, load_run, now_ns
from ..workload import busy_compute
from .common import BenchHost, bench_groups, delivery_for, group_of

IMAGE_TOPIC = "/bench/image"
RESULT_TOPIC = "/bench/result"
IMAGE_BYTES = 920_000
RESULT_BYTES = 64
RATES = (10, 30, 60)
MAX = "max"
DEFAULT_RUNS = 10
FULL_RUNS = 100
DEFAULT_ITERATIONS = 5
DEFAULT_ITERATION_SECONDS = 2.0
DEFAULT_COMPUTE_NS = 5_000_000
CLOSED_LOOP_TIMEOUT = 1.0
DRAIN_SECONDS = 0.3


def rate_spec() -> WorkloadSpec:
    qos = QosPolicy(1)
    playback = NodeSpec(
        "playback",
        timers=(TimerSpec(100_000_000, "on_frame"),),
        subscriptions=(SubscriptionSpec(RESULT_TOPIC, "on_result", qos),),
        publications=(PublicationSpec(IMAGE_TOPIC, IMAGE_BYTES, "on_frame", on_timer=True),),
    )
    worker = NodeSpec(
        "worker",
        subscriptions=(SubscriptionSpec(IMAGE_TOPIC, "on_image", qos),),
        publications=(PublicationSpec(RESULT_TOPIC, RESULT_BYTES, "on_image"),),
    )
    return WorkloadSpec((playback, worker), ModuleManifest((("playback", ("playback",)), ("worker", ("worker",)))))


def rate_chain(spec: Optional[WorkloadSpec] = None) -> ChainSpec:
    spec = spec or rate_spec()
    return resolve_chain(spec, ChainSpec((ChainHop("worker", "subscription", "Image"),), IMAGE_TOPIC))


@dataclass(frozen=True)
class RateConfig:
    rate: Union[int, str] = 30  # frames per second, or "max"
    runs: int = DEFAULT_RUNS
    iterations_per_run: int = DEFAULT_ITERATIONS
    iteration_seconds: float = DEFAULT_ITERATION_SECONDS
    payload: int = IMAGE_BYTES
    compute_ns: int = DEFAULT_COMPUTE_NS
    deployment: DeploymentPlan = field(default_factory=DeploymentPlan)
    sample_cpu: bool = True

    def __post_init__(self) -> None:
        if self.runs < 1 or self.iterations_per_run < 1:
            raise ValueError("runs and iterations must be >= 1")
        if self.rate != MAX and not (isinstance(self.rate, (int, float)) and self.rate > 0):
            raise ValueError(f"rate must be positive or {MAX!r}, got {self.rate!r}")
        if not self.iteration_seconds > 0:
            raise ValueError("iteration length must be positive")
        if self.compute_ns < 0 or self.payload < 0:
            raise ValueError("compute and payload must be >= 0")


@dataclass(frozen=True)
class IterationResult:
    published: int
    window: tuple  # (first publish ns, end of window ns)
    latencies_ms: tuple
    delivered: int
    dropped: int
    mean_interval_ms: Optional[float]
    cpu_percent: Optional[float]

    @property
    def mean_latency(self) -> float:
        return statistics.fmean(self.latencies_ms) if self.latencies_ms else math.nan

    @property
    def jitter(self) -> float:
        return jitter(self.latencies_ms) if len(self.latencies_ms) >= 2 else math.nan


@dataclass(frozen=True)
class RateResult:
    rate: Union[int, str]
    iterations: tuple

    def _mean(self, values) -> float:
        vals = [v for v in values if v is not None and not math.isnan(v)]
        return statistics.fmean(vals) if vals else math.nan

    @property
    def mean_latency(self) -> float:
        return self._mean(it.mean_latency for it in self.iterations)

    @property
    def mean_jitter(self) -> float:
        return self._mean(it.jitter for it in self.iterations)

    @property
    def mean_cpu(self) -> float:
        return self._mean(it.cpu_percent for it in self.iterations)

    @property
    def published(self) -> int:
        return sum(it.published for it in self.iterations)

    @property
    def dropped(self) -> int:
        return sum(it.dropped for it in self.iterations)

    @property
    def mean_interval_ms(self) -> float:
        return self._mean(it.mean_interval_ms for it in self.iterations)

    def latencies(self) -> list[float]:
        return [x for it in self.iterations for x in it.latencies_ms]


class RateHost(BenchHost):
    def __init__(self, nodes, run_id: str, group: str, payload: int, compute_ns: int):
        spec = rate_spec()
        super().__init__(spec, nodes, run_id, group, delivery_for("best_effort"), tracing=True)
        self.payload = bytes(payload)
        self.compute_ns = compute_ns
        self._result = threading.Event()
        qos = QosPolicy(1)
        self.image_pub = self.result_pub = None
        if "worker" in self.nodes:
            self.result_pub = self.mw.advertise("worker", RESULT_TOPIC)
            self.mw.subscribe("worker", IMAGE_TOPIC, qos, self._work)
        if "playback" in self.nodes:
            self.image_pub = self.mw.advertise("playback", IMAGE_TOPIC)
            self.mw.subscribe("playback", RESULT_TOPIC, qos, self._on_result)

    def _work(self, env: MessageEnvelope) -> None:
        busy_compute(self.compute_ns)
        self.result_pub.publish(env.seq.to_bytes(8, "big") + bytes(RESULT_BYTES - 8))

    def _on_result(self, env: MessageEnvelope) -> None:
        self._result.set()

    def go(self, rate=30, seconds: float = 1.0) -> dict:
        if self.image_pub is None:
            raise RuntimeError("this group does not host the playback node")
        stamps: list[int] = []
        seconds = float(seconds)
        if rate == MAX:
            t0 = now_ns()
            end = t0 + int(seconds * 1e9)
            while now_ns() < end:
                self._result.clear()
                self.image_pub.publish(self.payload)
                stamps.append(now_ns())
                self._result.wait(CLOSED_LOOP_TIMEOUT)
        else:
            period = 1e9 / float(rate)
            t0 = now_ns()
            end = t0 + int(seconds * 1e9)
            k = 0
            while True:
                target = t0 + int(round(k * period))
                if target >= end:
                    break
                delay = target - now_ns()
                if delay > 0:
                    time.sleep(delay / 1e9)
                self.image_pub.publish(self.payload)
                stamps.append(now_ns())
                k += 1
        # let the last frame finish before the window closes
        time.sleep(DRAIN_SECONDS)
        return {"published": len(stamps), "t0": t0, "end": end, "stamps": stamps}


def make_host(args):
    from ..orchestrator.child import params_of

    p = params_of(args)
    nodes = [n for n in args.nodes.split(",") if n]
    return RateHost(nodes, args.run_id, args.group, int(p.get("payload", IMAGE_BYTES)),
                    int(p.get("compute_ns", DEFAULT_COMPUTE_NS)))


def _iteration_result(run: dict, trace, all_paths, samples) -> IterationResult:
    t0, end = run["t0"], run["end"]
    stamps = run["stamps"]
    window_events = [ev for ev in trace.events if t0 <= ev.t]
    seqs = {ev.seq for ev in window_events if ev.kind == PUBLISH and ev.topic == IMAGE_TOPIC and ev.t < end}
    paths = [p for p in all_paths if p.sensor_seq in seqs]
    lat = tuple(data_age_series(paths))
    delivered = len({ev.seq for ev in window_events
                     if ev.kind == SUB_CB_START and ev.topic == IMAGE_TOPIC and ev.seq in seqs})
    intervals = [(b - a) / 1e6 for a, b in zip(stamps, stamps[1:])]
    cpu_vals = [s.total_cpu() for s in samples if t0 <= s.t <= end]
    return IterationResult(
        run["published"], (t0, end), lat, delivered, run["published"] - delivered,
        statistics.fmean(intervals) if intervals else None,
        statistics.fmean(cpu_vals) if cpu_vals else None,
    )


def rate_run(cfg: RateConfig, progress=None) -> RateResult:
    spec = rate_spec()
    chain = rate_chain(spec)
    plan = cfg.deployment
    args = ("--param", f"payload={cfg.payload}", "--param", f"compute_ns={cfg.compute_ns}")
    groups = bench_groups(plan, spec, args)
    playback_group = group_of(groups, "playback")
    iterations: list[IterationResult] = []
    for run in range(cfg.runs):
        run_id = f"rate{uuid.uuid4().hex[:10]}"
        with tempfile.TemporaryDirectory(prefix="chainbench-rate-") as tmp:

            def local(gs):
                return RateHost(gs.nodes, run_id, gs.name, cfg.payload, cfg.compute_ns)

            handle = launch_groups(groups, run_id=run_id, role="bench-rate", plan=plan,
                                   trace_dir=Path(tmp), local_factory=local)
            sampler = ResourceSampler(handle.processes) if cfg.sample_cpu else None
            raw = []
            try:
                if sampler:
                    sampler.start()
                for _ in range(cfg.iterations_per_run):
                    raw.append(handle.go(playback_group, timeout=cfg.iteration_seconds + 60.0,
                                         rate=cfg.rate, seconds=cfg.iteration_seconds))
            finally:
                samples = sampler.stop() if sampler else []
                handle.stop()
            trace = load_run(tmp, run_id)
        try:
            paths = reconstruct_paths(trace, chain)
        except ValueError:  # the worker never ran
            paths = []
        for r in raw:
            iterations.append(_iteration_result(r, trace, paths, samples))
        if progress:
            progress(run, iterations[-len(raw):])
    return RateResult(cfg.rate, tuple(iterations))


def calibrate_dispatch_budget(rate: int = 30, seconds: float = 5.0, payload: int = IMAGE_BYTES) -> float:
    """Dispatch overhead budget (ms): the worst frame-to-result latency of an
    in-process run with zero compute, i.e. the largest per-message overhead
    the host produced while calibrating."""
    res = rate_run(RateConfig(rate, runs=1, iterations_per_run=1, iteration_seconds=seconds,
                              payload=payload, compute_ns=0, sample_cpu=False))
    lat = res.latencies()
    if not lat:
        raise RuntimeError("calibration run produced no latency samples")
    return summarize(lat).max
