"""Compare the three deployment variants on the same workload through the
command-line entry point, then print the consolidated report.

    python3 demos/deployment_comparison.py OUT_DIR
"""
from __future__ import annotations

import sys
from pathlib import Path

from chainbench.cli import main as cli

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
code = cli(["run", "--preset", "mini-autoware", "--scale", "0.1", "--deployment", "all",
            "--runs", "2", "--duration", "4", "--out", str(out)])
if code:
    sys.exit(code)
code = cli(["analyze", str(out / "runs")])
if code:
    sys.exit(code)
# starred cells mark the best variant per column
print((out / "runs" / "analysis" / "report.txt").read_text())
