from __future__ import annotations

import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import MS, brute_histogram, brute_jitter, brute_summary, random_complete_path, simulate_chain
from chainbench.analysis import (
    COLUMNS,
    CSV_HEADER,
    ChainUnresolvable,
    HopRecord,
    IncompletePath,
    PathInstance,
    ReportFormatError,
    StatsSummary,
    breakdown_series,
    data_age_series,
    decompose,
    flag_minima,
    histogram,
    jitter,
    parse_report_csv,
    path_counts,
    reconstruct_paths,
    render_histogram_csv,
    render_report,
    summarize,
)
from chainbench.model import ChainHop, ChainSpec
from chainbench.tracing import (
    PUBLISH,
    SUB_CB_END,
    SUB_CB_START,
    TIMER_CB_END,
    TIMER_CB_START,
    Recorder,
    flush,
    load_trace,
)


def _close(a, b, rel=1e-9, floor=1e-9):
    if a is None or b is None:
        return a is b
    return math.isclose(a, b, rel_tol=rel, abs_tol=floor)


# -- decomposition ----------------------------------------------------------------------


def test_decompose_hand_example():
    # sensor at 0; hop A sub (comm 2, compute 5); hop B sub feeding timer; timer waits 10
    path = PathInstance(1, 0, (
        HopRecord("A", "subscription", 2, 8, 7),
        HopRecord("B", "subscription", 9, 12, None),
        HopRecord("B", "timer", 22, 30, 25),
    ), True)
    b = decompose(path)
    assert (b.e2e, b.idle, b.communication, b.compute) == (25, 10, 4, 11)
    assert b.per_hop == ((0, 2, 5), (0, 2, 3), (10, 0, 3))


def test_decompose_rejects_incomplete():
    with pytest.raises(IncompletePath):
        decompose(PathInstance(1, 0, (HopRecord("A", "subscription", 1, 2, 2),), False))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 17), st.integers(0, 2**32))
def test_decomposition_matches_generator(n_hops, seed):
    path, (e2e, idle, comm, comp) = random_complete_path(random.Random(seed), n_hops)
    b = decompose(path)
    assert (b.e2e, b.idle, b.communication, b.compute) == (e2e, idle, comm, comp)
    assert b.idle + b.communication + b.compute == b.e2e


# -- reconstruction ------------------------------------------------------------------------


def _tiny_chain():
    return ChainSpec((ChainHop("W", "subscription", "X", "/s", None),
                      ChainHop("W", "timer", "", None, "/o")), "/s")


def test_timer_consuming_same_input_twice_fans_out():
    rec = Recorder("t", pid=1)
    rec.record("S", PUBLISH, "/s", 7, t=0)
    rec.record("W", SUB_CB_START, "/s", 7, t=1 * MS)
    rec.record("W", SUB_CB_END, "/s", 7, t=2 * MS)
    for start in (10 * MS, 30 * MS):
        rec.record("W", TIMER_CB_START, "/s", 7, t=start)
        rec.record("W", PUBLISH, "/o", start, t=start + MS)
        rec.record("W", TIMER_CB_END, t=start + 2 * MS)
    paths = reconstruct_paths(rec.snapshot(), _tiny_chain())
    assert len(paths) == 2 and all(p.complete and p.sensor_seq == 7 for p in paths)
    assert sorted(decompose(p).e2e for p in paths) == [11 * MS, 31 * MS]
    assert data_age_series(paths) == [21.0]
    assert path_counts(paths) == {"paths": 2, "complete": 2, "incomplete": 0,
                                  "sensor_inputs": 1, "samples": 1}


def test_data_age_averages_paths_of_one_input():
    paths = []
    for e2e in (100, 120):
        paths.append(PathInstance(3, 0, (HopRecord("A", "subscription", 0, e2e * MS, e2e * MS),), True))
    paths.append(PathInstance(4, 0, (HopRecord("A", "subscription", 0, 5, None),), False))
    assert data_age_series(paths) == [110.0]
    series = breakdown_series(paths)
    assert series["E2E"] == [110.0] and series["Computation"] == [110.0]
    assert series["Idle"] == [0.0] and series["Communication"] == [0.0]


def test_unresolved_chain_and_missing_first_node():
    with pytest.raises(ChainUnresolvable):
        reconstruct_paths(Recorder().snapshot(), ChainSpec((ChainHop("W", "subscription"),)))
    rec = Recorder("t", pid=1)
    rec.record("S", PUBLISH, "/s", 1, t=0)
    with pytest.raises(ChainUnresolvable):
        reconstruct_paths(rec.snapshot(), _tiny_chain())


def test_unfinished_callback_is_incomplete():
    rec = Recorder("t", pid=1)
    rec.record("S", PUBLISH, "/s", 1, t=0)
    rec.record("W", SUB_CB_START, "/s", 1, t=5)
    paths = reconstruct_paths(rec.snapshot(), _tiny_chain())
    assert [p.complete for p in paths] == [False]


def test_half_rate_consumer_drops_half():
    # producer every 10 ms, a single subscription hop that takes ~20 ms
    rng = random.Random(5)
    s = simulate_chain(rng, 1, n_sensor=200, sensor_period=10 * MS, shape=[False],
                       compute=(19 * MS, 21 * MS), comm=(100_000, 200_000))
    paths = reconstruct_paths(s.trace, s.chain)
    assert Counter(paths) == Counter(s.truth)
    frac = path_counts(paths)["samples"] / s.sensor_publishes
    assert 0.4 <= frac <= 0.6


@pytest.mark.parametrize("seed", range(40))
def test_reconstruction_matches_simulator(seed):
    rng = random.Random(1000 + seed)
    s = simulate_chain(rng, rng.randint(1, 17))
    assert Counter(reconstruct_paths(s.trace, s.chain)) == Counter(s.truth)


def test_reconstruction_survives_flush_and_load(tmp_path):
    s = simulate_chain(random.Random(9), 17)
    path = tmp_path / "sim-1.trace"
    flush(s.trace, path)
    assert Counter(reconstruct_paths(load_trace(path), s.chain)) == Counter(s.truth)


# -- statistics ----------------------------------------------------------------------------


def test_summary_of_one_to_five():
    s = summarize([1, 2, 3, 4, 5])
    assert s.mean == 3 and s.skew == 0
    assert s.kurtosis == pytest.approx(-1.3, abs=1e-12)
    assert (s.q25, s.q50, s.q75) == (2, 3, 4)
    assert s.p99 == pytest.approx(4.96, abs=1e-12)
    assert s.std == pytest.approx(math.sqrt(2.5))


def test_small_and_flat_samples():
    one = summarize([7.0])
    assert (one.std, one.skew, one.kurtosis, one.min, one.max, one.p99) == (0.0, None, None, 7.0, 7.0, 7.0)
    three = summarize([1.0, 2.0, 4.0])
    assert three.skew is not None and three.kurtosis is None
    flat = summarize([2.0] * 10)
    assert flat.std == 0 and flat.skew is None and flat.kurtosis is None
    with pytest.raises(ValueError):
        summarize([])
    with pytest.raises(ValueError):
        summarize([1.0, float("nan")])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=300))
def test_summary_matches_brute_force(xs):
    got = summarize(xs)
    want = brute_summary(xs)
    scale = max(1.0, max(abs(x) for x in xs))
    for col in COLUMNS:
        g, w = getattr(got, col), want[col]
        if col in ("skew", "kurtosis"):
            # near-zero spread makes these ill-conditioned; the brute force is exact
            if w is None or g is None:
                continue
            assert _close(g, w, 1e-6, 1e-6)
        else:
            assert _close(g, w, 1e-9, 1e-9 * scale)
    assert got.min <= got.q25 <= got.q50 <= got.q75 <= got.p99 <= got.max
    assert got.min <= got.mean <= got.max


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=200))
def test_jitter_matches_brute_force(xs):
    assert _close(jitter(xs), brute_jitter(xs), 1e-9, 1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 500, allow_nan=False), min_size=1, max_size=200),
       st.sampled_from([0.5, 1.0, 5.0, 7.3]))
def test_histogram_matches_brute_force(xs, w):
    bins = histogram(xs, w)
    assert sum(c for _, c in bins) == len(xs)
    want = brute_histogram(xs, w)
    k0 = min(want)
    assert len(bins) == max(want) - k0 + 1
    for i, (lo, count) in enumerate(bins):
        assert lo == (k0 + i) * w
        assert count == want.get(k0 + i, 0)


def test_jitter_and_histogram_edges():
    assert jitter([1.0, 3.0, 2.0]) == 1.5
    with pytest.raises(ValueError):
        jitter([1.0])
    assert histogram([], 1.0) == []
    with pytest.raises(ValueError):
        histogram([1.0], 0)
    assert render_histogram_csv(histogram([0.5, 1.5, 1.7], 1.0)) == "bin_lo_ms,count\n0.0,1\n1.0,2\n"


# -- report ----------------------------------------------------------------------------------

X86_E2E = StatsSummary(194.67, 84.68, 3.01, 19.94, 31.28, 139.84, 199.43, 223.85, 515.87, 1437.94, 1000)


def _summary(base, n=10):
    return StatsSummary(*(base + i for i in range(len(COLUMNS))), n=n)


def test_report_renders_reference_row():
    rep = render_report({("E2E", "in_process"): X86_E2E})
    header, rule, row = rep.text.splitlines()[:3]
    assert header.split() == ["KPI", "Type", "Mean", "Std", "Skew", "Kurtosis", "Min", "Q25", "Q50",
                              "Q75", "P99", "Max", "n"]
    assert set(rule) == {"-"}
    assert row.split() == ["E2E", "in_process", "194.67*", "84.68*", "3.01*", "19.94*", "31.28*",
                           "139.84*", "199.43*", "223.85*", "515.87*", "1437.94*", "1000"]


def test_report_ties_flag_every_variant():
    a = _summary(1.0)
    b = StatsSummary(1.0, 5.0, None, 0.0, 4.0, 5, 6, 7, 8, 9, n=4)
    minima = flag_minima({("E2E", "in_process"): a, ("E2E", "multi_group"): b})
    assert ("E2E", "in_process", "mean") in minima and ("E2E", "multi_group", "mean") in minima
    assert ("E2E", "multi_group", "skew") not in minima
    assert ("E2E", "in_process", "skew") in minima


def test_report_csv_roundtrip_and_order():
    summaries = {}
    for k, kpi in enumerate(("Computation", "E2E", "Idle", "Communication")):
        for v, variant in enumerate(("multi_group", "in_process", "single_group")):
            summaries[(kpi, variant)] = _summary(k * 10 + v + 0.123456789, n=5 + v)
    summaries[("Idle", "in_process")] = StatsSummary(1.0, 0.0, None, None, 1, 1, 1, 1, 1, 1, n=1)
    rep = render_report(summaries)
    lines = rep.csv.splitlines()
    assert tuple(lines[0].split(",")) == CSV_HEADER
    order = [tuple(line.split(",")[:2]) for line in lines[1:]]
    assert order[:3] == [("E2E", "in_process"), ("E2E", "single_group"), ("E2E", "multi_group")]
    assert [k for k, _ in order[::3]] == ["E2E", "Idle", "Communication", "Computation"]
    assert parse_report_csv(rep.csv) == summaries
    assert render_report(parse_report_csv(rep.csv)).text == rep.text
    assert "-" in rep.text.splitlines()[2 + 3]  # the Idle/in_process row shows missing skew


def test_report_csv_errors():
    with pytest.raises(ReportFormatError):
        parse_report_csv("")
    with pytest.raises(ReportFormatError):
        parse_report_csv("a,b\n")
    with pytest.raises(ReportFormatError):
        parse_report_csv(",".join(CSV_HEADER) + "\nE2E,in_process,1\n")
    with pytest.raises(ValueError):
        render_report({})
