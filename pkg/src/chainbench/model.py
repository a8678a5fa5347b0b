"""Domain types for workload graphs, module manifests, computation chains and
deployment plans.

All durations are integer nanoseconds. Types are frozen dataclasses; the
`config` module builds them from text and validates cross-references.
"""
from __future__ import annotations

import math
import os
import random
import re
from dataclasses import dataclass, field
from typing import Literal, Optional

IDENT_RE = re.compile(r"^[A-Za-z_/~][\w./~-]*$")

BEST_EFFORT = "best_effort"
RELIABLE = "reliable"

VARIANTS = ("in_process", "single_group", "multi_group")
ISOLATION_LEVELS = ("none", "process_group", "process_group_with_limits")


class ModelError(ValueError):
    """Raised when a domain object violates one of its invariants."""


def is_identifier(name: str) -> bool:
    return bool(name) and IDENT_RE.match(name) is not None


def _require_ident(name: str, what: str) -> None:
    if not is_identifier(name):
        raise ModelError(f"{what} {name!r} is not a valid identifier")


@dataclass(frozen=True)
class QosPolicy:
    depth: int = 1
    reliability: str = BEST_EFFORT

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ModelError(f"keep_last depth must be >= 1, got {self.depth}")
        if self.reliability not in (BEST_EFFORT, RELIABLE):
            raise ModelError(f"unknown reliability {self.reliability!r}")

    @property
    def reliable(self) -> bool:
        return self.reliability == RELIABLE


@dataclass(frozen=True)
class TimerSpec:
    period_ns: int
    callback: str
    # topic whose most recent input the timer consumes; None -> node's first subscription
    reads: Optional[str] = None

    def __post_init__(self) -> None:
        if self.period_ns <= 0:
            raise ModelError(f"timer {self.callback!r}: period must be > 0")
        _require_ident(self.callback, "timer callback")


@dataclass(frozen=True)
class SubscriptionSpec:
    topic: str
    callback: str
    qos: QosPolicy = field(default_factory=QosPolicy)

    def __post_init__(self) -> None:
        _require_ident(self.topic, "subscription topic")
        _require_ident(self.callback, "subscription callback")


@dataclass(frozen=True)
class PublicationSpec:
    topic: str
    payload_size: int
    callback: str
    on_timer: bool = False

    def __post_init__(self) -> None:
        _require_ident(self.topic, "publication topic")
        if self.payload_size < 0:
            raise ModelError(f"publication {self.topic!r}: payload_size must be >= 0")


@dataclass(frozen=True)
class ComputeModel:
    """Distribution of synthetic busy-work per callback.

    ``fixed`` and ``uniform`` parameters are nanoseconds; ``lognormal`` takes
    ``(mu, sigma)`` of the natural log of the duration in milliseconds.
    """

    kind: Literal["fixed", "uniform", "lognormal"] = "fixed"
    params: tuple = (0,)

    def __post_init__(self) -> None:
        if self.kind == "fixed":
            if len(self.params) != 1 or self.params[0] < 0:
                raise ModelError("fixed compute needs one duration >= 0")
        elif self.kind == "uniform":
            if len(self.params) != 2:
                raise ModelError("uniform compute needs (lo, hi)")
            lo, hi = self.params
            if lo < 0 or hi < 0 or lo > hi:
                raise ModelError(f"uniform compute needs 0 <= lo <= hi, got {lo}, {hi}")
        elif self.kind == "lognormal":
            if len(self.params) != 2 or self.params[1] < 0:
                raise ModelError("lognormal compute needs (mu, sigma >= 0)")
        else:
            raise ModelError(f"unknown compute distribution {self.kind!r}")

    @classmethod
    def fixed(cls, ns: int) -> "ComputeModel":
        return cls("fixed", (int(ns),))

    @classmethod
    def uniform(cls, lo_ns: int, hi_ns: int) -> "ComputeModel":
        return cls("uniform", (int(lo_ns), int(hi_ns)))

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> "ComputeModel":
        return cls("lognormal", (float(mu), float(sigma)))

    def sample(self, rng: random.Random) -> int:
        if self.kind == "fixed":
            return self.params[0]
        if self.kind == "uniform":
            return rng.randint(self.params[0], self.params[1])
        mu, sigma = self.params
        return max(0, int(round(math.exp(rng.gauss(mu, sigma)) * 1e6)))


@dataclass(frozen=True)
class NodeSpec:
    name: str
    timers: tuple[TimerSpec, ...] = ()
    subscriptions: tuple[SubscriptionSpec, ...] = ()
    publications: tuple[PublicationSpec, ...] = ()
    compute: ComputeModel = field(default_factory=ComputeModel)

    def __post_init__(self) -> None:
        _require_ident(self.name, "node name")
        if not self.timers and not self.subscriptions:
            raise ModelError(f"node {self.name!r} has neither timer nor subscription")
        names = [t.callback for t in self.timers] + [s.callback for s in self.subscriptions]
        if len(set(names)) != len(names):
            raise ModelError(f"node {self.name!r} declares a callback name twice")
        timer_names = {t.callback for t in self.timers}
        for pub in self.publications:
            if pub.callback not in names:
                raise ModelError(
                    f"node {self.name!r}: publication {pub.topic!r} triggered by "
                    f"undeclared callback {pub.callback!r}"
                )
            if pub.on_timer != (pub.callback in timer_names):
                raise ModelError(f"node {self.name!r}: trigger kind mismatch for {pub.topic!r}")

    def callback_names(self) -> list[str]:
        return [t.callback for t in self.timers] + [s.callback for s in self.subscriptions]

    def publications_of(self, callback: str) -> list[PublicationSpec]:
        return [p for p in self.publications if p.callback == callback]

    def timer_reads(self, timer: TimerSpec) -> Optional[str]:
        if timer.reads is not None:
            return timer.reads
        return self.subscriptions[0].topic if self.subscriptions else None


@dataclass(frozen=True)
class ModuleManifest:
    modules: tuple[tuple[str, tuple[str, ...]], ...] = ()
    launch_params: dict = field(default_factory=dict)

    @property
    def module_names(self) -> list[str]:
        return [name for name, _ in self.modules]

    def nodes_of(self, module: str) -> tuple[str, ...]:
        for name, nodes in self.modules:
            if name == module:
                return nodes
        raise KeyError(module)

    def module_of(self, node: str) -> str:
        for name, nodes in self.modules:
            if node in nodes:
                return name
        raise KeyError(node)

    def counts(self) -> dict[str, int]:
        return {name: len(nodes) for name, nodes in self.modules}


@dataclass(frozen=True)
class WorkloadSpec:
    nodes: tuple[NodeSpec, ...]
    manifest: ModuleManifest = field(default_factory=ModuleManifest)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for node in self.nodes:
            if node.name in seen:
                raise ModelError(f"duplicate node name {node.name!r}")
            seen.add(node.name)
        if self.manifest.modules:
            placed: dict[str, str] = {}
            for module, members in self.manifest.modules:
                for member in members:
                    if member not in seen:
                        raise ModelError(f"module {module!r} references unknown node {member!r}")
                    if member in placed:
                        raise ModelError(
                            f"node {member!r} appears in modules {placed[member]!r} and {module!r}"
                        )
                    placed[member] = module
            missing = seen - placed.keys()
            if missing:
                raise ModelError(f"nodes not assigned to any module: {sorted(missing)}")

    def node(self, name: str) -> NodeSpec:
        for node in self.nodes:
            if node.name == name:
                return node
        raise KeyError(name)

    @property
    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def topics(self) -> set[str]:
        out: set[str] = set()
        for node in self.nodes:
            out.update(p.topic for p in node.publications)
            out.update(s.topic for s in node.subscriptions)
        return out

    def publishers_of(self, topic: str) -> list[str]:
        return [n.name for n in self.nodes if any(p.topic == topic for p in n.publications)]

    def subscribers_of(self, topic: str) -> list[str]:
        return [n.name for n in self.nodes if any(s.topic == topic for s in n.subscriptions)]


@dataclass(frozen=True)
class ChainHop:
    node: str
    kind: Literal["subscription", "timer"]
    signature: str = ""
    topic: Optional[str] = None
    output_topic: Optional[str] = None
    callback: Optional[str] = None

    @property
    def is_timer(self) -> bool:
        return self.kind == "timer"


@dataclass(frozen=True)
class ChainSpec:
    hops: tuple[ChainHop, ...]
    sensor_topic: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.hops:
            raise ModelError("chain has no hops")
        for i, hop in enumerate(self.hops):
            if hop.is_timer and (i == 0 or self.hops[i - 1].node != hop.node):
                raise ModelError(f"timer hop {i} ({hop.node}) lacks a same-node predecessor")

    @property
    def resolved(self) -> bool:
        if self.sensor_topic is None:
            return False
        return all(h.is_timer or h.topic is not None for h in self.hops)

    def timer_positions(self) -> list[int]:
        return [i for i, h in enumerate(self.hops) if h.is_timer]


@dataclass(frozen=True)
class ResourceLimits:
    cpu_quota: Optional[float] = None  # cores, e.g. 0.5
    memory_bytes: Optional[int] = None


@dataclass(frozen=True)
class DeploymentPlan:
    variant: str = "in_process"
    isolation: str = "none"
    # group name -> cpu ids; key "*" applies to every group
    affinity: Optional[dict] = None
    limits: Optional[ResourceLimits] = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown deployment variant {self.variant!r}")
        if self.isolation not in ISOLATION_LEVELS:
            raise ModelError(f"unknown isolation level {self.isolation!r}")
        if self.variant == "in_process" and self.isolation != "none":
            raise ModelError("in_process deployment cannot apply process isolation")

    def check(self, manifest: Optional[ModuleManifest] = None) -> None:
        if self.variant == "multi_group" and (manifest is None or not manifest.modules):
            raise ModelError("multi_group deployment requires a module manifest")
        if self.affinity:
            host = _host_cpus()
            for group, cpus in self.affinity.items():
                bad = [c for c in cpus if c not in host]
                if bad or not cpus:
                    raise ModelError(f"affinity for {group!r} names invalid cpus {bad or cpus}")

    def cpus_for(self, group: str) -> Optional[set[int]]:
        if not self.affinity:
            return None
        cpus = self.affinity.get(group, self.affinity.get("*"))
        return set(cpus) if cpus else None


def _host_cpus() -> set[int]:
    if hasattr(os, "sched_getaffinity"):
        return set(os.sched_getaffinity(0))
    return set(range(os.cpu_count() or 1))
