"""Run a small synthetic driving stack in one process and break its
sensor-to-actuator latency into idle, communication and compute time.

    python3 demos/chain_latency_walkthrough.py [seconds]
"""
from __future__ import annotations

import sys
import time

from chainbench.analysis import breakdown_series, path_counts, reconstruct_paths, render_report, summarize
from chainbench.workload import NodeHost, PresetConfig, build_mini_autoware
from chainbench.workload.preset import chain_text


def main() -> None:
    seconds = float(sys.argv[1]) if len(sys.argv) > 1 else 5.0
    spec, manifest, chain = build_mini_autoware(PresetConfig(scale=0.1))
    print(f"{len(spec.nodes)} nodes in {len(manifest.modules)} modules; the measured chain:")
    print(chain_text(chain))

    host = NodeHost(spec, spec.node_names, "demo", seed=1)
    host.start()
    time.sleep(seconds)
    host.stop()

    paths = reconstruct_paths(host.recorder.snapshot(), chain)
    print("paths:", path_counts(paths))
    series = breakdown_series(paths)
    if not series["E2E"]:
        print("no complete path yet, try a longer run")
        return
    # the idle share is what the timer hops add on top of pure processing
    report = render_report({(kpi, "in_process"): summarize(v) for kpi, v in series.items()})
    print(report.text)


if __name__ == "__main__":
    main()
