"""The mini-Autoware preset: eight modules sized after the Autoware service
split, an embedded 17-hop localization-to-vehicle computation chain, and
filler nodes producing background pub/sub traffic.

Timer periods of the chain's timer hops, compute distributions and payload
sizes are artifact defaults, overridable through `PresetConfig`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from ..config import render_chain_spec, resolve_chain
from ..model import (
    ChainHop,
    ChainSpec,
    ComputeModel,
    ModelError,
    ModuleManifest,
    NodeSpec,
    PublicationSpec,
    QosPolicy,
    SubscriptionSpec,
    TimerSpec,
    WorkloadSpec,
)

MS = 1_000_000

MODULE_SIZES = {
    "sensing": 48,
    "perception": 49,
    "localization": 33,
    "map": 6,
    "planning": 25,
    "control": 8,
    "vehicle": 1,
    "system": 21,
}

SENSOR_NODE = "LidarDriver"
SENSOR_TOPIC = "/sensing/lidar/top/pointcloud"

_T = "/planning/scenario_planning"
# (node, module, signature, input topic, output topic, timer-hop output)
# a node with a timer hop stores its input and publishes from the timer
CHAIN_NODES = [
    ("Filter", "localization", "PointCloud2,PointIndices", SENSOR_TOPIC,
     "/localization/util/downsample/pointcloud", None),
    ("NDTScanMatcher", "localization", "PointCloud2", "/localization/util/downsample/pointcloud",
     "/localization/pose_estimator/pose_with_covariance", None),
    ("EKFLocalizer", "localization", "PoseWithCovarianceStamped",
     "/localization/pose_estimator/pose_with_covariance", None,
     "/localization/pose_twist_fusion_filter/kinematic_state"),
    ("StopFilter", "localization", "Odometry", "/localization/pose_twist_fusion_filter/kinematic_state",
     "/localization/kinematic_state", None),
    ("BehaviorPathPlannerNode", "planning", "Odometry", "/localization/kinematic_state", None,
     f"{_T}/lane_driving/behavior_planning/path_with_lane_id"),
    ("BehaviorVelocityPlannerNode", "planning", "PathWithLaneId",
     f"{_T}/lane_driving/behavior_planning/path_with_lane_id",
     f"{_T}/lane_driving/behavior_planning/path", None),
    ("ObstacleAvoidancePlanner", "planning", "Path", f"{_T}/lane_driving/behavior_planning/path",
     f"{_T}/lane_driving/motion_planning/obstacle_avoidance_planner/trajectory", None),
    ("ObstacleVelocityLimiterNode", "planning", "Trajectory",
     f"{_T}/lane_driving/motion_planning/obstacle_avoidance_planner/trajectory",
     f"{_T}/lane_driving/motion_planning/obstacle_velocity_limiter/trajectory", None),
    ("ObstacleStopPlannerNode", "planning", "Trajectory",
     f"{_T}/lane_driving/motion_planning/obstacle_velocity_limiter/trajectory",
     f"{_T}/lane_driving/trajectory", None),
    ("ScenarioSelectorNode", "planning", "Trajectory", f"{_T}/lane_driving/trajectory",
     f"{_T}/scenario_selector/trajectory", None),
    ("MotionVelocitySmootherNode", "planning", "Trajectory", f"{_T}/scenario_selector/trajectory",
     f"{_T}/trajectory", None),
    ("PlanningValidator", "planning", "Trajectory", f"{_T}/trajectory", "/planning/trajectory", None),
    ("Controller", "control", "Trajectory", "/planning/trajectory", None,
     "/control/trajectory_follower/control_cmd"),
    ("VehicleCmdGate", "vehicle", "AckermannControlCommand", "/control/trajectory_follower/control_cmd",
     "/control/command/control_cmd", None),
]

DEFAULT_CHAIN_PERIODS = {
    "EKFLocalizer": 20 * MS,
    "BehaviorPathPlannerNode": 100 * MS,
    "Controller": 33_333_333,
}

DEFAULT_CHAIN_COMPUTE = {
    SENSOR_NODE: ComputeModel.fixed(200_000),
    "Filter": ComputeModel.uniform(1 * MS, 3 * MS),
    "NDTScanMatcher": ComputeModel.uniform(3 * MS, 8 * MS),
    "EKFLocalizer": ComputeModel.fixed(500_000),
    "StopFilter": ComputeModel.fixed(200_000),
    "BehaviorPathPlannerNode": ComputeModel.uniform(2 * MS, 5 * MS),
    "BehaviorVelocityPlannerNode": ComputeModel.uniform(1 * MS, 3 * MS),
    "ObstacleAvoidancePlanner": ComputeModel.uniform(2 * MS, 6 * MS),
    "ObstacleVelocityLimiterNode": ComputeModel.uniform(500_000, 1_500_000),
    "ObstacleStopPlannerNode": ComputeModel.uniform(500_000, 1_500_000),
    "ScenarioSelectorNode": ComputeModel.fixed(200_000),
    "MotionVelocitySmootherNode": ComputeModel.uniform(1 * MS, 3 * MS),
    "PlanningValidator": ComputeModel.fixed(300_000),
    "Controller": ComputeModel.uniform(1 * MS, 2 * MS),
    "VehicleCmdGate": ComputeModel.fixed(200_000),
}

KB = 1024
DEFAULT_PAYLOADS = {
    SENSOR_TOPIC: 128 * KB,
    "/localization/util/downsample/pointcloud": 64 * KB,
    f"{_T}/lane_driving/behavior_planning/path_with_lane_id": 16 * KB,
    f"{_T}/lane_driving/behavior_planning/path": 16 * KB,
}
TRAJECTORY_BYTES = 32 * KB
DEFAULT_MESSAGE_BYTES = 1 * KB


@dataclass(frozen=True)
class PresetConfig:
    scale: float = 1.0
    chain_periods: dict = field(default_factory=lambda: dict(DEFAULT_CHAIN_PERIODS))
    payload_profile: dict = field(default_factory=dict)
    sensor_period_ns: int = 100 * MS
    filler_period_ns: int = 100 * MS
    filler_payload: int = 1 * KB
    filler_compute: ComputeModel = field(default_factory=lambda: ComputeModel.fixed(100_000))
    chain_compute: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 < self.scale <= 1:
            raise ModelError(f"scale must be in (0, 1], got {self.scale}")


def scaled_module_sizes(scale: float) -> dict[str, int]:
    """Module node counts ``ceil(scale * n)``, at least 1 per module."""
    if not 0 < scale <= 1:
        raise ModelError(f"scale must be in (0, 1], got {scale}")
    frac = Fraction(str(scale))
    sizes = {m: max(1, math.ceil(frac * n)) for m, n in MODULE_SIZES.items()}
    if any(v < 1 for v in sizes.values()):
        raise ModelError("scale produces an empty module")
    return sizes


def _payload(cfg: PresetConfig, topic: str) -> int:
    if topic in cfg.payload_profile:
        return cfg.payload_profile[topic]
    if topic in DEFAULT_PAYLOADS:
        return DEFAULT_PAYLOADS[topic]
    if "trajectory" in topic:
        return TRAJECTORY_BYTES
    return DEFAULT_MESSAGE_BYTES


def chain_module_requirements() -> dict[str, int]:
    need = {m: 0 for m in MODULE_SIZES}
    need["sensing"] += 1
    for _, module, *_ in CHAIN_NODES:
        need[module] += 1
    return need


def build_mini_autoware(preset: Optional[PresetConfig] = None) -> tuple[WorkloadSpec, ModuleManifest, ChainSpec]:
    cfg = preset or PresetConfig()
    sizes = scaled_module_sizes(cfg.scale)
    need = chain_module_requirements()
    compute = dict(DEFAULT_CHAIN_COMPUTE)
    compute.update(cfg.chain_compute)

    nodes: list[NodeSpec] = []
    members: dict[str, list[str]] = {m: [] for m in MODULE_SIZES}

    nodes.append(NodeSpec(
        SENSOR_NODE,
        timers=(TimerSpec(cfg.sensor_period_ns, "on_scan"),),
        publications=(PublicationSpec(SENSOR_TOPIC, _payload(cfg, SENSOR_TOPIC), "on_scan", on_timer=True),),
        compute=compute[SENSOR_NODE],
    ))
    members["sensing"].append(SENSOR_NODE)

    hops: list[ChainHop] = []
    for name, module, sig, topic_in, out, timer_out in CHAIN_NODES:
        sub = SubscriptionSpec(topic_in, "on_input", QosPolicy(1))
        timers: tuple = ()
        if timer_out is not None:
            period = cfg.chain_periods.get(name, DEFAULT_CHAIN_PERIODS.get(name, 100 * MS))
            timers = (TimerSpec(period, "on_timer", reads=topic_in),)
            pubs = (PublicationSpec(timer_out, _payload(cfg, timer_out), "on_timer", on_timer=True),)
        else:
            pubs = (PublicationSpec(out, _payload(cfg, out), "on_input"),)
        nodes.append(NodeSpec(name, timers, (sub,), pubs, compute.get(name, ComputeModel.fixed(200_000))))
        members[module].append(name)
        hops.append(ChainHop(name, "subscription", sig))
        if timer_out is not None:
            hops.append(ChainHop(name, "timer"))

    fillers: dict[str, list[str]] = {}
    for module in MODULE_SIZES:
        count = max(0, sizes[module] - need[module])
        fillers[module] = [f"{module}_filler_{i}" for i in range(count)]
    order = [m for m in MODULE_SIZES if fillers[m]]
    for mi, module in enumerate(order):
        names = fillers[module]
        for i, name in enumerate(names):
            subs = []
            if len(names) > 1:
                subs.append(SubscriptionSpec(f"/{module}/filler_{(i - 1) % len(names)}", "on_peer"))
            if i == 0 and len(order) > 1:
                prev = order[mi - 1]
                subs.append(SubscriptionSpec(f"/{prev}/filler_{len(fillers[prev]) - 1}", "on_upstream"))
            nodes.append(NodeSpec(
                name,
                timers=(TimerSpec(cfg.filler_period_ns, "on_tick"),),
                subscriptions=tuple(subs),
                publications=(PublicationSpec(f"/{module}/filler_{i}", cfg.filler_payload, "on_tick", on_timer=True),),
                compute=cfg.filler_compute,
            ))
            members[module].append(name)

    manifest = ModuleManifest(
        tuple((m, tuple(members[m])) for m in MODULE_SIZES),
        {"preset": "mini-autoware", "scale": str(cfg.scale), "vehicle_model": "sample_vehicle"},
    )
    spec = WorkloadSpec(tuple(nodes), manifest)
    chain = resolve_chain(spec, ChainSpec(tuple(hops), SENSOR_TOPIC))
    return spec, manifest, chain


def chain_text(chain: ChainSpec) -> str:
    return render_chain_spec(chain)
