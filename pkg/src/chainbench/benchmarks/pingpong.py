"""Ping-pong round-trip benchmark.

A ping node publishes a payload, a pong node echoes it back, and the ping
side waits for the echo before sending the next one (one message in flight).
The first 8 payload bytes carry the round number so late echoes of timed-out
rounds are ignored; every echo is compared byte for byte with what was sent.
"""
from __future__ import annotations

import math
import random
import statistics
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ..middleware import MessageEnvelope
from ..model import (
    DeploymentPlan,
    ModuleManifest,
    NodeSpec,
    PublicationSpec,
    QosPolicy,
    SubscriptionSpec,
    WorkloadSpec,
)
from ..orchestrator import launch_groups
from ..tracing import now_ns
from .common import KB, MB, BenchHost, bench_groups, delivery_for, group_of

PING_TOPIC = "/bench/ping"
PONG_TOPIC = "/bench/pong"
SWEEP_SIZES = (1 * KB, 4 * KB, 8 * KB, 16 * KB, 32 * KB, 64 * KB, 128 * KB, 256 * KB, 512 * KB,
               1 * MB, 2 * MB, 4 * MB, 8 * MB)
DEFAULT_REPEATS = 3
DEFAULT_DURATION = 30.0
FULL_DURATION = 30 * 60.0
LOSS_TIMEOUT = 1.0


def pingpong_spec(mode: str = "best_effort") -> WorkloadSpec:
    qos = QosPolicy(1, "reliable" if mode.replace("-", "_") == "reliable" else "best_effort")
    ping = NodeSpec("ping", subscriptions=(SubscriptionSpec(PONG_TOPIC, "on_pong", qos),),
                    publications=(PublicationSpec(PING_TOPIC, 0, "on_pong"),))
    pong = NodeSpec("pong", subscriptions=(SubscriptionSpec(PING_TOPIC, "on_ping", qos),),
                    publications=(PublicationSpec(PONG_TOPIC, 0, "on_ping"),))
    return WorkloadSpec((ping, pong), ModuleManifest((("ping", ("ping",)), ("pong", ("pong",)))))


@dataclass(frozen=True)
class PingPongConfig:
    message_size: int
    mode: str = "best_effort"
    duration: float = 1.0
    deployment: DeploymentPlan = field(default_factory=DeploymentPlan)
    loss_timeout: float = LOSS_TIMEOUT
    seed: int = 0

    def __post_init__(self) -> None:
        if self.message_size < 0:
            raise ValueError("message size must be >= 0")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        delivery_for(self.mode)


@dataclass(frozen=True)
class PingPongResult:
    message_size: int
    sent: int
    packet_count: int  # completed round trips
    lost: int
    echo_mismatch: int
    elapsed: float
    rtt_ns: tuple = ()

    @property
    def mean_rtt(self) -> float:
        """Mean round-trip time in microseconds (nan when nothing came back)."""
        if not self.rtt_ns:
            return math.nan
        return sum(self.rtt_ns) / len(self.rtt_ns) / 1000.0

    @property
    def throughput(self) -> float:
        return self.packet_count / self.elapsed if self.elapsed > 0 else 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "PingPongResult":
        return cls(d["message_size"], d["sent"], d["completed"], d["lost"], d["echo_mismatch"],
                   d["elapsed"], tuple(d["rtt_ns"]))


class PingPongHost(BenchHost):
    def __init__(self, nodes, run_id: str, group: str, mode: str, message_size: int):
        spec = pingpong_spec(mode)
        super().__init__(spec, nodes, run_id, group, delivery_for(mode), tracing=False)
        self.size = message_size
        self.qos = spec.node("ping").subscriptions[0].qos
        self._cond = threading.Condition()
        self._expect: Optional[bytes] = None
        self._reply: Optional[int] = None
        self.mismatch = 0
        self.ping_pub = self.pong_pub = None
        if "pong" in self.nodes:
            self.pong_pub = self.mw.advertise("pong", PONG_TOPIC)
            self.mw.subscribe("pong", PING_TOPIC, self.qos, self._echo)
        if "ping" in self.nodes:
            self.ping_pub = self.mw.advertise("ping", PING_TOPIC)
            self.mw.subscribe("ping", PONG_TOPIC, self.qos, self._on_pong)

    def _echo(self, env: MessageEnvelope) -> None:
        self.pong_pub.publish(env.payload)

    def _on_pong(self, env: MessageEnvelope) -> None:
        t = now_ns()
        with self._cond:
            expect = self._expect
            if expect is None:
                return
            if env.payload == expect:
                self._reply = t
                self._expect = None
                self._cond.notify()
            elif len(expect) < 8 or env.payload[:8] == expect[:8]:
                self.mismatch += 1

    def go(self, duration: float = 1.0, loss_timeout: float = LOSS_TIMEOUT, seed: int = 0) -> dict:
        if self.ping_pub is None:
            raise RuntimeError("this group does not host the ping node")
        rng = random.Random(seed)
        base = bytearray(rng.randbytes(self.size))
        rtts: list[int] = []
        sent = 0
        start = time.monotonic()
        end = start + float(duration)
        while time.monotonic() < end:
            sent += 1
            if self.size >= 8:
                base[:8] = sent.to_bytes(8, "big")
            payload = bytes(base)
            with self._cond:
                self._expect = payload
                self._reply = None
            t0 = now_ns()
            self.ping_pub.publish(payload)
            with self._cond:
                self._cond.wait_for(lambda: self._reply is not None, timeout=float(loss_timeout))
                if self._reply is not None:
                    rtts.append(self._reply - t0)
                self._expect = None
        elapsed = time.monotonic() - start
        return {"message_size": self.size, "sent": sent, "completed": len(rtts), "lost": sent - len(rtts),
                "echo_mismatch": self.mismatch, "elapsed": elapsed, "rtt_ns": rtts}


def make_host(args):
    from ..orchestrator.child import params_of

    p = params_of(args)
    nodes = [n for n in args.nodes.split(",") if n]
    return PingPongHost(nodes, args.run_id, args.group, p.get("mode", "best_effort"), int(p.get("size", 0)))


def pingpong_run(cfg: PingPongConfig, trace_dir: Optional[Path] = None) -> PingPongResult:
    plan = cfg.deployment
    spec = pingpong_spec(cfg.mode)
    args = ("--param", f"mode={cfg.mode}", "--param", f"size={cfg.message_size}")
    groups = bench_groups(plan, spec, args)
    run_id = f"pp{uuid.uuid4().hex[:10]}"
    with tempfile.TemporaryDirectory(prefix="chainbench-pp-") as tmp:
        tdir = Path(trace_dir) if trace_dir else Path(tmp)

        def local(gs):
            return PingPongHost(gs.nodes, run_id, gs.name, cfg.mode, cfg.message_size)

        handle = launch_groups(groups, run_id=run_id, role="bench-pingpong", plan=plan,
                               trace_dir=tdir, local_factory=local)
        try:
            timeout = cfg.duration + cfg.loss_timeout + 60.0
            res = handle.go(group_of(groups, "ping"), timeout=timeout, duration=cfg.duration,
                            loss_timeout=cfg.loss_timeout, seed=cfg.seed)
        finally:
            handle.stop()
    return PingPongResult.from_dict(res)


@dataclass(frozen=True)
class SweepRow:
    message_size: int
    repeat: Optional[int]  # None on the per-size mean row
    mean_rtt_us: float
    packet_count: float
    lost: float


@dataclass
class PingPongSweep:
    results: dict  # size -> list[PingPongResult]

    def mean_rtt(self, size: int) -> float:
        vals = [r.mean_rtt for r in self.results[size] if r.rtt_ns]
        return statistics.fmean(vals) if vals else math.nan

    def rows(self) -> list[SweepRow]:
        out = []
        for size, runs in self.results.items():
            for i, r in enumerate(runs):
                out.append(SweepRow(size, i, r.mean_rtt, r.packet_count, r.lost))
            out.append(SweepRow(size, None, self.mean_rtt(size),
                                statistics.fmean(r.packet_count for r in runs),
                                statistics.fmean(r.lost for r in runs)))
        return out

    def to_csv(self) -> str:
        lines = ["size_bytes,repeat,mean_rtt_us,packet_count,lost"]
        for row in self.rows():
            rep = "mean" if row.repeat is None else str(row.repeat)
            lines.append(f"{row.message_size},{rep},{row.mean_rtt_us!r},{row.packet_count!r},{row.lost!r}")
        return "\n".join(lines) + "\n"


def pingpong_sweep(sizes: Sequence[int] = SWEEP_SIZES, repeats: int = DEFAULT_REPEATS,
                   per_size_duration: float = DEFAULT_DURATION, mode: str = "best_effort",
                   deployment: Optional[DeploymentPlan] = None, progress=None) -> PingPongSweep:
    sizes = list(sizes)
    if not sizes:
        raise ValueError("sweep needs at least one message size")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    plan = deployment or DeploymentPlan("multi_group")
    results: dict[int, list[PingPongResult]] = {}
    for size in sizes:
        for rep in range(repeats):
            r = pingpong_run(PingPongConfig(size, mode, per_size_duration, plan, seed=rep))
            results.setdefault(size, []).append(r)
            if progress:
                progress(size, rep, r)
    return PingPongSweep(results)
