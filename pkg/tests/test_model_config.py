from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainbench.config import (
    ConfigError,
    ms_to_ns,
    ns_to_ms,
    parse_chain_spec,
    parse_workload_spec,
    render_chain_spec,
    render_workload_spec,
    resolve_chain,
    validate_graph,
)
from chainbench.model import (
    ChainHop,
    ChainSpec,
    ComputeModel,
    DeploymentPlan,
    ModelError,
    NodeSpec,
    PublicationSpec,
    QosPolicy,
    SubscriptionSpec,
    TimerSpec,
    WorkloadSpec,
)

SPEC = """\
param preset=tiny
node cam  # sensor
  timer 100 tick
  pub /img 1024 on tick
  compute fixed 0.5
node det
  sub /img on_img keep_last=1 best_effort
  pub /obj 64 on on_img
  compute uniform 1 2
node ctl
  sub /obj on_obj reliable
  timer 33.333333 loop reads=/obj
  pub /cmd 16 on loop
  compute lognormal 0.1 0.2
module sense: cam
module think: det,ctl
"""

CHAIN = """\
(0) det::(Image)
(1) ctl::(Objects)
(2) ctl::()
"""


def test_workload_roundtrip():
    spec = parse_workload_spec(SPEC)
    again = parse_workload_spec(render_workload_spec(spec))
    assert again == spec
    assert spec.manifest.counts() == {"sense": 1, "think": 2}
    assert spec.manifest.launch_params == {"preset": "tiny"}
    ctl = spec.node("ctl")
    assert ctl.subscriptions[0].qos == QosPolicy(1, "reliable")
    assert ctl.timers[0].period_ns == 33_333_333
    assert ctl.publications[0].on_timer


def test_chain_resolution():
    spec = parse_workload_spec(SPEC)
    chain = resolve_chain(spec, parse_chain_spec(CHAIN))
    assert chain.resolved
    assert chain.sensor_topic == "/img"
    assert [h.topic for h in chain.hops] == ["/img", "/obj", None]
    assert [h.output_topic for h in chain.hops] == ["/obj", None, "/cmd"]
    assert chain.timer_positions() == [2]
    annotated = render_chain_spec(chain, annotate=True)
    assert resolve_chain(spec, parse_chain_spec(annotated)) == chain


@pytest.mark.parametrize("text, line", [
    ("node a\n  timer 10 t\n  bogus 1\n", 3),
    ("node a\n  timer 10 t\nnode a\n  timer 5 u\n", 3),
    ("  sub /x cb\n", 1),
    ("node a\n  timer -1 t\n", 2),
    ("node a\n  sub /x cb keep_last=0\n", 2),
    ("node a\n  timer 10 t\n  pub /x 5 on missing\n", 3),
    ("node a\n  timer 10 t\n  compute gaussian 1\n", 3),
])
def test_workload_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_workload_spec(text)
    assert info.value.line == line


def test_unknown_field_has_column():
    with pytest.raises(ConfigError) as info:
        parse_workload_spec("node a\n  timer 10 t\n    frobnicate 3\n")
    assert (info.value.line, info.value.column) == (3, 5)
    assert "frobnicate" in str(info.value)


def test_module_membership_checked():
    with pytest.raises(ConfigError):
        parse_workload_spec("node a\n  timer 1 t\nmodule m: a,b\n")
    with pytest.raises(ConfigError):
        parse_workload_spec("node a\n  timer 1 t\nnode b\n  timer 1 t\nmodule m: a\n")


def test_chain_parse_errors():
    with pytest.raises(ConfigError) as info:
        parse_chain_spec("a::(X)\nnot a hop\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError):
        parse_chain_spec("b::()\n")
    with pytest.raises(ConfigError):
        parse_chain_spec("# only a comment\n")


def test_validation_findings():
    spec = parse_workload_spec(SPEC.replace("module think: det,ctl", "module think: det,ctl,lonely")
                              + "node lonely\n  sub /nobody cb\n")
    report = validate_graph(spec, parse_chain_spec("det::(Image)\nlonely::(X)\n"))
    codes = {f.code for f in report.findings}
    assert "dangling-subscription" in codes
    assert not report.valid
    assert any(f.code == "unresolved-subscription" for f in report.fatal)
    with pytest.raises(ConfigError):
        resolve_chain(spec, parse_chain_spec("ghost::(X)\n"))


def test_model_invariants():
    with pytest.raises(ModelError):
        QosPolicy(0)
    with pytest.raises(ModelError):
        QosPolicy(1, "sometimes")
    with pytest.raises(ModelError):
        NodeSpec("n")
    with pytest.raises(ModelError):
        NodeSpec("n", timers=(TimerSpec(1, "t"),), publications=(PublicationSpec("/x", 1, "t"),))
    with pytest.raises(ModelError):
        ChainSpec((ChainHop("a", "timer"),))
    with pytest.raises(ModelError):
        ChainSpec(())
    with pytest.raises(ModelError):
        ComputeModel.uniform(5, 1)
    with pytest.raises(ModelError):
        DeploymentPlan("in_process", "process_group")
    with pytest.raises(ModelError):
        DeploymentPlan("multi_group").check(None)
    with pytest.raises(ModelError):
        DeploymentPlan("single_group", affinity={"*": [10_000]}).check()


def test_compute_sampling():
    rng = random.Random(1)
    assert ComputeModel.fixed(7).sample(rng) == 7
    vals = [ComputeModel.uniform(10, 20).sample(rng) for _ in range(200)]
    assert min(vals) >= 10 and max(vals) <= 20
    assert all(v > 0 for v in (ComputeModel.lognormal(0.0, 0.5).sample(rng) for _ in range(50)))


def test_subscription_default_qos():
    sub = SubscriptionSpec("/x", "cb")
    assert sub.qos.depth == 1 and not sub.qos.reliable


@given(st.integers(min_value=0, max_value=10**15))
def test_ms_ns_roundtrip(ns):
    assert ms_to_ns(ns_to_ms(ns)) == ns


_ident = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(_ident, st.integers(1, 10**9), st.integers(0, 10**6),
                          st.integers(1, 5), st.booleans()),
                min_size=1, max_size=6, unique_by=lambda t: t[0]))
def test_render_parse_property(rows):
    nodes = []
    for i, (name, period, size, depth, reliable) in enumerate(rows):
        subs = ()
        if i:
            subs = (SubscriptionSpec(f"/{rows[i - 1][0]}", "on_in",
                                     QosPolicy(depth, "reliable" if reliable else "best_effort")),)
        nodes.append(NodeSpec(name, timers=(TimerSpec(period, "tick"),), subscriptions=subs,
                              publications=(PublicationSpec(f"/{name}", size, "tick", on_timer=True),),
                              compute=ComputeModel.fixed(period // 2)))
    spec = WorkloadSpec(tuple(nodes))
    assert parse_workload_spec(render_workload_spec(spec)) == spec
