"""Two middleware micro-benchmarks at desk scale: round-trip time across
message sizes, and frame-rate tracking of a fixed-compute worker.

    python3 demos/pingpong_and_rate.py
"""
from __future__ import annotations

from scipy.stats import spearmanr

from chainbench.benchmarks import SWEEP_SIZES, RateConfig, format_size, pingpong_sweep, rate_run
from chainbench.model import DeploymentPlan

sweep = pingpong_sweep(SWEEP_SIZES, repeats=1, per_size_duration=0.5, deployment=DeploymentPlan("multi_group"))
for size in SWEEP_SIZES:
    print(f"{format_size(size):>6}  {sweep.mean_rtt(size):10.1f} us")
rho = spearmanr(list(SWEEP_SIZES), [sweep.mean_rtt(s) for s in SWEEP_SIZES]).statistic
print(f"size/RTT rank correlation: {rho:.3f}")

for fps in (10, 30, 60):
    res = rate_run(RateConfig(fps, runs=1, iterations_per_run=1, iteration_seconds=3.0))
    print(f"{fps:>3} fps: published {res.published}, mean latency {res.mean_latency:.2f} ms, "
          f"jitter {res.mean_jitter:.2f} ms, cpu {res.mean_cpu:.0f}%")
