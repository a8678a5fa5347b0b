"""Trace analysis: chain paths, latency decomposition, statistics, reports."""
from .paths import (
    KPI_FIELDS,
    ChainUnresolvable,
    HopRecord,
    IncompletePath,
    LatencyBreakdown,
    PathInstance,
    breakdown_series,
    data_age_series,
    decompose,
    path_counts,
    reconstruct_paths,
)
from .report import (
    CSV_HEADER,
    KPIS,
    VARIANT_ORDER,
    Report,
    ReportFormatError,
    flag_minima,
    parse_report_csv,
    render_histogram_csv,
    render_report,
)
from .stats import COLUMNS, StatsSummary, histogram, jitter, summarize

__all__ = [
    "KPI_FIELDS", "ChainUnresolvable", "HopRecord", "IncompletePath", "LatencyBreakdown",
    "PathInstance", "breakdown_series", "data_age_series", "decompose", "path_counts",
    "reconstruct_paths", "CSV_HEADER", "KPIS", "VARIANT_ORDER", "Report", "ReportFormatError",
    "flag_minima", "parse_report_csv", "render_histogram_csv", "render_report",
    "COLUMNS", "StatsSummary", "histogram", "jitter", "summarize",
]
