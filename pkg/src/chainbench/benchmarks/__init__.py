"""Ping-pong round-trip and frame-rate benchmarks."""
from .common import format_size, parse_size
from .pingpong import (
    SWEEP_SIZES,
    PingPongConfig,
    PingPongResult,
    PingPongSweep,
    pingpong_run,
    pingpong_sweep,
)
from .rate import MAX, RATES, RateConfig, RateResult, calibrate_dispatch_budget, rate_run

__all__ = [
    "format_size", "parse_size", "SWEEP_SIZES", "PingPongConfig", "PingPongResult", "PingPongSweep",
    "pingpong_run", "pingpong_sweep", "MAX", "RATES", "RateConfig", "RateResult",
    "calibrate_dispatch_budget", "rate_run",
]
