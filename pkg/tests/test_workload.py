from __future__ import annotations

import time

import pytest

from chainbench.analysis import path_counts, reconstruct_paths
from chainbench.config import parse_chain_spec, parse_workload_spec, render_workload_spec, resolve_chain
from chainbench.model import ModelError
from chainbench.tracing import NODE_READY, TIMER_CB_START
from chainbench.workload import NodeHost, PresetConfig, build_mini_autoware, busy_compute, scaled_module_sizes
from chainbench.workload.preset import MODULE_SIZES, chain_text

MODULE_COUNTS = {"sensing": 48, "perception": 49, "localization": 33, "map": 6,
           "planning": 25, "control": 8, "vehicle": 1, "system": 21}


def test_full_scale_module_counts():
    spec, manifest, chain = build_mini_autoware()
    assert manifest.counts() == MODULE_COUNTS
    assert len(spec.nodes) == sum(MODULE_COUNTS.values()) == 191
    assert manifest.module_names == list(MODULE_COUNTS)


def test_chain_shape():
    _, _, chain = build_mini_autoware()
    assert len(chain.hops) == 17
    assert chain.timer_positions() == [3, 6, 15]
    assert chain.hops[0].node == "Filter"
    assert chain.hops[-1].node == "VehicleCmdGate"
    assert chain.resolved
    text = chain_text(chain)
    assert text.splitlines()[3] == "(3) EKFLocalizer::()"


def test_spec_text_roundtrip_of_preset():
    spec, _, chain = build_mini_autoware(PresetConfig(scale=0.2))
    again = parse_workload_spec(render_workload_spec(spec))
    assert again == spec
    assert resolve_chain(again, parse_chain_spec(chain_text(chain))) == chain


@pytest.mark.parametrize("scale", [0.05, 0.1, 0.5, 1.0])
def test_scaled_preset_keeps_chain(scale):
    spec, manifest, chain = build_mini_autoware(PresetConfig(scale=scale))
    counts = manifest.counts()
    for module, n in scaled_module_sizes(scale).items():
        assert counts[module] >= n
    assert all(v >= 1 for v in counts.values())
    for hop in chain.hops:
        spec.node(hop.node)


def test_scale_bounds():
    assert scaled_module_sizes(1.0) == MODULE_SIZES
    assert scaled_module_sizes(0.1)["sensing"] == 5
    for bad in (0, -1, 1.5):
        with pytest.raises(ModelError):
            scaled_module_sizes(bad)


def test_busy_compute_lower_bound():
    assert busy_compute(0) >= 0
    assert busy_compute(2_000_000) >= 2_000_000
    with pytest.raises(ValueError):
        busy_compute(-1)


def test_in_process_host_produces_paths():
    spec, _, chain = build_mini_autoware(PresetConfig(scale=0.05, sensor_period_ns=50_000_000))
    host = NodeHost(spec, spec.node_names, "t", seed=1)
    host.start()
    time.sleep(1.5)
    host.stop()
    trace = host.recorder.snapshot()
    ready = {e.node for e in trace.events if e.kind == NODE_READY}
    assert ready == set(spec.node_names)
    consumed = [e for e in trace.events if e.kind == TIMER_CB_START and e.node == "EKFLocalizer" and e.topic]
    assert consumed, "timer hop never consumed a stored input"
    counts = path_counts(reconstruct_paths(trace, chain))
    assert counts["samples"] > 0
    assert host.status() == {"failed": [], "dropped": 0}
