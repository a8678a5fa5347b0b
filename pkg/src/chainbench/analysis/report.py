"""Consolidated latency report: aligned text table plus lossless CSV."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Optional

from .stats import COLUMNS, StatsSummary

KPIS = ("E2E", "Idle", "Communication", "Computation")
VARIANT_ORDER = ("in_process", "single_group", "multi_group")
CSV_HEADER = ("kpi", "variant") + COLUMNS + ("n",)
TEXT_HEADER = ("KPI", "Type", "Mean", "Std", "Skew", "Kurtosis", "Min", "Q25", "Q50", "Q75", "P99", "Max", "n")


class ReportFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Report:
    text: str
    csv: str
    minima: frozenset  # {(kpi, variant, column)}


def _order(keys) -> list[tuple[str, str]]:
    def rank(key):
        kpi, variant = key
        k = KPIS.index(kpi) if kpi in KPIS else len(KPIS)
        v = VARIANT_ORDER.index(variant) if variant in VARIANT_ORDER else len(VARIANT_ORDER)
        return (k, kpi, v, variant)
    return sorted(keys, key=rank)


def flag_minima(summaries: Mapping[tuple[str, str], StatsSummary]) -> frozenset:
    """Per KPI and column, every variant attaining the minimum (ties all flagged)."""
    flagged = set()
    by_kpi: dict[str, list] = {}
    for (kpi, variant), s in summaries.items():
        by_kpi.setdefault(kpi, []).append((variant, s))
    for kpi, rows in by_kpi.items():
        for col in COLUMNS:
            vals = [(v, getattr(s, col)) for v, s in rows if getattr(s, col) is not None]
            if not vals:
                continue
            best = min(val for _, val in vals)
            flagged.update((kpi, v, col) for v, val in vals if val == best)
    return frozenset(flagged)


def _fmt(value: Optional[float], flag: bool) -> str:
    if value is None:
        return "-"
    return f"{value:.2f}" + ("*" if flag else "")


def _csv_value(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def render_report(summaries: Mapping[tuple[str, str], StatsSummary]) -> Report:
    if not summaries:
        raise ValueError("report needs at least one summary")
    minima = flag_minima(summaries)
    keys = _order(summaries)

    rows = [TEXT_HEADER]
    for kpi, variant in keys:
        s = summaries[(kpi, variant)]
        rows.append((kpi, variant)
                    + tuple(_fmt(getattr(s, c), (kpi, variant, c) in minima) for c in COLUMNS)
                    + (str(s.n),))
    widths = [max(len(r[i]) for r in rows) for i in range(len(TEXT_HEADER))]
    lines = []
    for i, r in enumerate(rows):
        cells = [r[0].ljust(widths[0]), r[1].ljust(widths[1])]
        cells += [c.rjust(w) for c, w in zip(r[2:], widths[2:])]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("-" * len(lines[0]))
    lines.append("")
    lines.append("latencies in ms; * marks the per-column minimum across deployment types")
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for kpi, variant in keys:
        s = summaries[(kpi, variant)]
        w.writerow([kpi, variant] + [_csv_value(getattr(s, c)) for c in COLUMNS] + [s.n])
    return Report(text, buf.getvalue(), minima)


def parse_report_csv(text: str) -> dict[tuple[str, str], StatsSummary]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise ReportFormatError("empty report") from None
    if header != CSV_HEADER:
        raise ReportFormatError(f"unexpected header {header}")
    out = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ReportFormatError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        kpi, variant, *vals, n = row
        try:
            nums = [float(v) if v != "" else None for v in vals]
            out[(kpi, variant)] = StatsSummary(*nums, n=int(n))
        except (TypeError, ValueError) as exc:
            raise ReportFormatError(f"line {lineno}: {exc}") from None
    return out


def render_histogram_csv(bins: list[tuple[float, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("bin_lo_ms", "count"))
    for lo, count in bins:
        w.writerow((repr(float(lo)), count))
    return buf.getvalue()
