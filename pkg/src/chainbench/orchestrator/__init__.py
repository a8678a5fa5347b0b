"""Process-group deployment of workloads, ramp-up and resource sampling."""
from .child import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME
from .isolation import IsolationDriver, IsolationUnavailable, host_summary
from .launch import (
    ChildGroup,
    GroupSpec,
    LaunchError,
    RunHandle,
    group_alive,
    launch,
    launch_groups,
    workload_groups,
)
from .monitor import (
    ProcSample,
    RampUp,
    ResourceSample,
    ResourceSampler,
    measure_rampup,
    sample_resources,
)

__all__ = [
    "EXIT_CONFIG", "EXIT_OK", "EXIT_RUNTIME", "IsolationDriver", "IsolationUnavailable",
    "host_summary", "ChildGroup", "GroupSpec", "LaunchError", "RunHandle", "group_alive",
    "launch", "launch_groups", "workload_groups", "ProcSample", "RampUp", "ResourceSample",
    "ResourceSampler", "measure_rampup", "sample_resources",
]
