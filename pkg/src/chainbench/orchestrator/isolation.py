"""Host isolation capabilities: process groups, CPU affinity, cgroup limits."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..model import DeploymentPlan, ResourceLimits

log = logging.getLogger(__name__)

CGROUP_ROOT = Path("/sys/fs/cgroup")
CFS_PERIOD_US = 100_000


class IsolationUnavailable(RuntimeError):
    pass


def _writable(path: Path) -> bool:
    return path.exists() and os.access(path, os.W_OK)


@dataclass
class IsolationDriver:
    """Probes what the host supports and applies it per process group.

    Anything a plan asks for that the host lacks is downgraded with a warning
    (kept in ``warnings``), except hard resource limits, which raise.
    """

    process_group: bool = False
    cpu_affinity: bool = False
    resource_limits: bool = False
    cgroup_version: Optional[int] = None
    root: Path = CGROUP_ROOT
    warnings: list = field(default_factory=list)
    _created: list = field(default_factory=list)

    @classmethod
    def probe(cls, root: Path = CGROUP_ROOT) -> "IsolationDriver":
        drv = cls(root=root)
        drv.process_group = hasattr(os, "setsid") and hasattr(os, "killpg")
        drv.cpu_affinity = hasattr(os, "sched_setaffinity")
        if _writable(root / "cpu") and _writable(root / "memory"):
            drv.cgroup_version = 1
        elif (root / "cgroup.controllers").exists() and _writable(root):
            ctrl = (root / "cgroup.controllers").read_text().split()
            if "cpu" in ctrl and "memory" in ctrl:
                drv.cgroup_version = 2
        drv.resource_limits = drv.cgroup_version is not None
        return drv

    def warn(self, message: str) -> None:
        self.warnings.append(message)
        log.warning(message)

    def check(self, plan: DeploymentPlan) -> None:
        if plan.variant == "in_process":
            if plan.affinity or plan.limits:
                self.warn("in_process deployment ignores affinity and resource limits")
            return
        if not self.process_group:
            raise IsolationUnavailable("host cannot create process groups")
        if plan.affinity and not self.cpu_affinity:
            self.warn("cpu affinity unsupported on this host; groups run unpinned")
        if plan.isolation == "process_group_with_limits":
            if not plan.limits:
                raise IsolationUnavailable("process_group_with_limits needs ResourceLimits")
            if not self.resource_limits:
                raise IsolationUnavailable("resource limits requested but no writable cgroup hierarchy")
        elif plan.limits:
            self.warn(f"resource limits ignored under isolation {plan.isolation!r}")

    def cpus_arg(self, plan: DeploymentPlan, group: str) -> Optional[str]:
        cpus = plan.cpus_for(group)
        if cpus is None or not self.cpu_affinity:
            return None
        return ",".join(str(c) for c in sorted(cpus))

    def apply_limits(self, name: str, pid: int, limits: ResourceLimits) -> list[Path]:
        """Move ``pid`` (all threads) into fresh cgroups carrying ``limits``."""
        if not self.resource_limits:
            raise IsolationUnavailable("no writable cgroup hierarchy")
        made = []
        if self.cgroup_version == 1:
            if limits.cpu_quota is not None:
                d = self._mkdir(self.root / "cpu" / name)
                (d / "cpu.cfs_period_us").write_text(str(CFS_PERIOD_US))
                (d / "cpu.cfs_quota_us").write_text(str(max(1000, int(limits.cpu_quota * CFS_PERIOD_US))))
                (d / "cgroup.procs").write_text(str(pid))
                made.append(d)
            if limits.memory_bytes is not None:
                d = self._mkdir(self.root / "memory" / name)
                (d / "memory.limit_in_bytes").write_text(str(limits.memory_bytes))
                (d / "cgroup.procs").write_text(str(pid))
                made.append(d)
        else:
            d = self._mkdir(self.root / name)
            if limits.cpu_quota is not None:
                quota = max(1000, int(limits.cpu_quota * CFS_PERIOD_US))
                (d / "cpu.max").write_text(f"{quota} {CFS_PERIOD_US}")
            if limits.memory_bytes is not None:
                (d / "memory.max").write_text(str(limits.memory_bytes))
            (d / "cgroup.procs").write_text(str(pid))
            made.append(d)
        return made

    def _mkdir(self, path: Path) -> Path:
        path.mkdir(exist_ok=True)
        self._created.append(path)
        return path

    def cleanup(self) -> None:
        for d in reversed(self._created):
            try:
                d.rmdir()
            except OSError:
                # a cgroup with live tasks cannot be removed; leave it for the OS
                if d.exists():
                    self.warn(f"could not remove cgroup {d}")
        self._created.clear()


def host_summary(drv: IsolationDriver) -> dict:
    return {
        "process_group": drv.process_group,
        "cpu_affinity": drv.cpu_affinity,
        "resource_limits": drv.resource_limits,
        "cgroup_version": drv.cgroup_version,
        "cpus": len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count(),
    }
