from __future__ import annotations

import math

import pytest

from chainbench.benchmarks import (
    MAX,
    SWEEP_SIZES,
    PingPongConfig,
    PingPongResult,
    PingPongSweep,
    RateConfig,
    format_size,
    parse_size,
    pingpong_run,
    pingpong_sweep,
    rate_run,
)
from chainbench.benchmarks.common import bench_groups
from chainbench.benchmarks.pingpong import PingPongHost, pingpong_spec
from chainbench.benchmarks.rate import rate_chain, rate_spec
from chainbench.config import ConfigError
from chainbench.middleware import MessageEnvelope
from chainbench.model import DeploymentPlan


def test_sweep_sizes_are_the_thirteen_reference_sizes():
    kb, mb = 1024, 1024 * 1024
    assert SWEEP_SIZES == (kb, 4 * kb, 8 * kb, 16 * kb, 32 * kb, 64 * kb, 128 * kb, 256 * kb, 512 * kb,
                           mb, 2 * mb, 4 * mb, 8 * mb)
    assert [format_size(s) for s in SWEEP_SIZES][:3] == ["1KB", "4KB", "8KB"]


@pytest.mark.parametrize("text, n", [("1KB", 1024), ("8MB", 8 << 20), ("512", 512), ("0.5kb", 512),
                                     ("3 B", 3), ("2MiB", 2 << 20)])
def test_parse_size(text, n):
    assert parse_size(text) == n
    assert parse_size(format_size(n)) == n


@pytest.mark.parametrize("text", ["", "KB", "1.3B", "-4KB", "1GB"])
def test_parse_size_rejects(text):
    with pytest.raises(ConfigError):
        parse_size(text)


def test_bench_groups_per_variant():
    spec = pingpong_spec()
    assert [g.name for g in bench_groups(DeploymentPlan("in_process"), spec, ())] == ["local"]
    assert [g.nodes for g in bench_groups(DeploymentPlan("single_group"), spec, ())] == [("ping", "pong")]
    assert [g.name for g in bench_groups(DeploymentPlan("multi_group"), spec, ())] == ["ping", "pong"]


@pytest.mark.parametrize("variant", ["in_process", "multi_group"])
def test_pingpong_roundtrips(variant):
    r = pingpong_run(PingPongConfig(4096, duration=0.3, deployment=DeploymentPlan(variant)))
    assert r.packet_count > 10
    assert r.lost == 0 and r.echo_mismatch == 0
    assert r.sent == r.packet_count
    assert 0 < r.mean_rtt < 100_000
    assert r.throughput > 0


def test_pingpong_reliable_mode():
    r = pingpong_run(PingPongConfig(100_000, "reliable", 0.3, DeploymentPlan("multi_group")))
    assert r.packet_count > 5 and r.lost == 0 and r.echo_mismatch == 0


def test_corrupted_echo_is_counted_not_accepted():
    host = PingPongHost(["ping"], "x", "g", "best_effort", 16)
    host._expect = b"\x00" * 8 + b"A" * 8
    host._on_pong(MessageEnvelope("/bench/pong", 1, 0, b"\x00" * 8 + b"B" * 8))
    assert host.mismatch == 1 and host._reply is None
    host._on_pong(MessageEnvelope("/bench/pong", 2, 0, b"\x01" * 16))  # stale round, ignored
    assert host.mismatch == 1
    host._on_pong(MessageEnvelope("/bench/pong", 3, 0, b"\x00" * 8 + b"A" * 8))
    assert host._reply is not None
    host.stop()


def test_sweep_rows_and_csv():
    res = {1024: [PingPongResult(1024, 3, 3, 0, 0, 1.0, (1000, 2000, 3000)),
                  PingPongResult(1024, 2, 1, 1, 0, 1.0, (4000,))]}
    sweep = PingPongSweep(res)
    assert sweep.mean_rtt(1024) == pytest.approx(3.0)
    rows = sweep.rows()
    assert [r.repeat for r in rows] == [0, 1, None]
    assert rows[-1].packet_count == 2 and rows[-1].lost == 0.5
    csv = sweep.to_csv().splitlines()
    assert csv[0] == "size_bytes,repeat,mean_rtt_us,packet_count,lost"
    assert csv[-1].startswith("1024,mean,3.0,")
    assert math.isnan(PingPongResult(1, 1, 0, 1, 0, 1.0).mean_rtt)


def test_sweep_argument_checks():
    with pytest.raises(ValueError):
        pingpong_sweep([], 1, 0.1)
    with pytest.raises(ValueError):
        pingpong_sweep([1024], 0, 0.1)
    with pytest.raises(ValueError):
        PingPongConfig(-1)
    with pytest.raises(ConfigError):
        PingPongConfig(1, "maybe")


def test_rate_config_checks():
    for bad in (dict(rate=0), dict(rate="fast"), dict(runs=0), dict(iteration_seconds=0),
                dict(compute_ns=-1)):
        with pytest.raises(ValueError):
            RateConfig(**bad)
    assert RateConfig(MAX).rate == MAX
    chain = rate_chain(rate_spec())
    assert chain.sensor_topic == "/bench/image" and chain.hops[0].output_topic == "/bench/result"


def test_rate_run_counts_and_latency():
    res = rate_run(RateConfig(20, runs=1, iterations_per_run=2, iteration_seconds=1.0,
                              payload=10_000, compute_ns=2_000_000))
    assert [it.published for it in res.iterations] == [20, 20]
    assert res.dropped == 0
    assert 2.0 <= res.mean_latency < 50
    assert res.mean_interval_ms == pytest.approx(50, abs=5)
    assert not math.isnan(res.mean_jitter)
    assert res.mean_cpu > 0


def test_rate_max_mode_is_closed_loop():
    res = rate_run(RateConfig(MAX, runs=1, iterations_per_run=1, iteration_seconds=0.5,
                              payload=10_000, compute_ns=5_000_000, sample_cpu=False,
                              deployment=DeploymentPlan("multi_group")))
    it = res.iterations[0]
    assert it.mean_interval_ms >= 5.0
    assert 20 <= it.published <= 100
    assert it.dropped == 0
