"""Effective CPU count detection: affinity mask combined with cgroup CPU quota.

Precedence: FRIENDLY_CPUS env override > cgroup v2 > cgroup v1 > affinity.
Quota cores are kept as exact rationals (quota/period) and only rounded
(ceil) when turned into a thread count. CPU shares and cpusets are not
consulted: shares are only a lower bound and the affinity mask already
covers pinning.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

ENV_OVERRIDE_VAR = "FRIENDLY_CPUS"

DEFAULT_CGROUP_ROOT = Path("/sys/fs/cgroup")
DEFAULT_PROC_CGROUP = Path("/proc/self/cgroup")


class QuotaSource(Enum):
    AFFINITY = "affinity"
    CGROUP_V1 = "cgroup_v1"
    CGROUP_V2 = "cgroup_v2"
    ENV_OVERRIDE = "env_override"
    UNLIMITED = "unlimited"


class CgroupParseError(ValueError):
    """Malformed cgroup quota data; carries the offending text."""

    def __init__(self, message: str, text: str):
        super().__init__(f"{message}: {text!r}")
        self.text = text


@dataclass(frozen=True)
class QuotaCores:
    """A CPU quota expressed in cores: quota time / scheduler period, exact."""

    value: Fraction
    source: QuotaSource

    def __post_init__(self):
        if self.source is not QuotaSource.UNLIMITED and self.value <= 0:
            raise ValueError(f"quota cores must be positive, got {self.value}")


@dataclass(frozen=True)
class CpuBudget:
    """The CPU count a process should size its threadpool to."""

    effective_cpus: int
    affinity_cpus: int
    quota: Optional[QuotaCores] = None


def affinity_cpu_count() -> int:
    """CPUs in this process's affinity mask; falls back to online CPU count, then 1."""
    try:
        return len(os.sched_getaffinity(0)) or 1
    except (AttributeError, OSError):
        pass
    count = os.cpu_count()
    if count:
        return count
    logger.warning("could not determine CPU count from affinity or os.cpu_count; assuming 1")
    return 1


def parse_cgroup_v2_cpu_max(text: str) -> Optional[QuotaCores]:
    """Parse a cgroup v2 ``cpu.max`` file: "QUOTA PERIOD" or "max PERIOD".

    Returns None for unlimited ("max").
    """
    parts = text.split()
    if len(parts) != 2:
        raise CgroupParseError("cpu.max must have exactly two fields", text)
    quota_str, period_str = parts
    try:
        period = int(period_str)
    except ValueError:
        raise CgroupParseError("cpu.max period is not an integer", text) from None
    if period <= 0:
        raise CgroupParseError("cpu.max period must be positive", text)
    if quota_str == "max":
        return None
    try:
        quota = int(quota_str)
    except ValueError:
        raise CgroupParseError("cpu.max quota is not an integer", text) from None
    if quota <= 0:
        raise CgroupParseError("cpu.max quota must be positive", text)
    return QuotaCores(Fraction(quota, period), QuotaSource.CGROUP_V2)


def parse_cgroup_v1_quota(quota_us: int, period_us: int) -> Optional[QuotaCores]:
    """Combine cgroup v1 ``cpu.cfs_quota_us`` / ``cpu.cfs_period_us``.

    quota_us == -1 means unlimited and returns None.
    """
    if period_us <= 0:
        raise CgroupParseError("cfs_period_us must be positive", str(period_us))
    if quota_us < -1 or quota_us == 0:
        raise CgroupParseError("cfs_quota_us must be -1 (unlimited) or positive", str(quota_us))
    if quota_us == -1:
        return None
    return QuotaCores(Fraction(quota_us, period_us), QuotaSource.CGROUP_V1)


def _own_cgroup_paths(proc_cgroup_file: Path) -> dict:
    """Map of {'v2': relpath, 'v1': relpath} from the per-process cgroup file."""
    paths = {}
    for line in proc_cgroup_file.read_text().splitlines():
        fields = line.split(":", 2)
        if len(fields) != 3:
            continue
        _, controllers, path = fields
        rel = path.lstrip("/")
        if controllers == "":
            paths["v2"] = rel
        elif "cpu" in controllers.split(","):
            paths["v1"] = rel
    return paths


def _candidate_dirs(base: Path, rel: str):
    # The process's own cgroup dir first, then each ancestor up to the root;
    # limits are commonly set on a parent slice.
    parts = [p for p in rel.split("/") if p]
    while True:
        yield base.joinpath(*parts)
        if not parts:
            return
        parts.pop()


def _detect_v2_quota(cgroup_root: Path, rel: str) -> Optional[QuotaCores]:
    for directory in _candidate_dirs(cgroup_root, rel):
        cpu_max = directory / "cpu.max"
        if cpu_max.is_file():
            quota = parse_cgroup_v2_cpu_max(cpu_max.read_text())
            if quota is not None:
                return quota
    return None


def _detect_v1_quota(cgroup_root: Path, rel: str) -> Optional[QuotaCores]:
    for controller in ("cpu", "cpu,cpuacct"):
        base = cgroup_root / controller
        if not base.is_dir():
            continue
        for directory in _candidate_dirs(base, rel):
            quota_file = directory / "cpu.cfs_quota_us"
            period_file = directory / "cpu.cfs_period_us"
            if quota_file.is_file() and period_file.is_file():
                quota_us = int(quota_file.read_text().strip())
                period_us = int(period_file.read_text().strip())
                quota = parse_cgroup_v1_quota(quota_us, period_us)
                if quota is not None:
                    return quota
    return None


def detect_quota(
    cgroup_root: Path = DEFAULT_CGROUP_ROOT,
    proc_cgroup_file: Path = DEFAULT_PROC_CGROUP,
) -> Optional[QuotaCores]:
    """Find this process's CPU quota, trying cgroup v2 before v1.

    Unreadable or malformed cgroup data degrades to no-quota with a warning;
    this must never abort the calling application.
    """
    try:
        paths = _own_cgroup_paths(proc_cgroup_file)
    except OSError as exc:
        logger.warning("cannot read %s (%s); assuming no CPU quota", proc_cgroup_file, exc)
        return None
    try:
        if "v2" in paths:
            quota = _detect_v2_quota(cgroup_root, paths["v2"])
            if quota is not None:
                return quota
        if "v1" in paths:
            return _detect_v1_quota(cgroup_root, paths["v1"])
    except (OSError, ValueError) as exc:
        logger.warning("cgroup quota detection failed (%s); assuming no CPU quota", exc)
    return None


def effective_cpus(
    env_override: Optional[int] = None,
    cgroup_root: Path = DEFAULT_CGROUP_ROOT,
    proc_cgroup_file: Path = DEFAULT_PROC_CGROUP,
) -> CpuBudget:
    """The CPU count this process should use: min(affinity, ceil(quota cores)).

    ``env_override`` (or the FRIENDLY_CPUS env var when the argument is None)
    wins outright. Fractional quota cores round up so a 1.5-core quota still
    gets 2 threads and the guaranteed time can actually be consumed.
    """
    affinity = affinity_cpu_count()
    if env_override is None:
        raw = os.environ.get(ENV_OVERRIDE_VAR)
        if raw is not None:
            try:
                env_override = int(raw)
                if env_override <= 0:
                    raise ValueError
            except ValueError:
                logger.warning("ignoring invalid %s=%r", ENV_OVERRIDE_VAR, raw)
                env_override = None
    if env_override is not None:
        if env_override <= 0:
            raise ValueError(f"env_override must be positive, got {env_override}")
        quota = QuotaCores(Fraction(env_override), QuotaSource.ENV_OVERRIDE)
        return CpuBudget(env_override, affinity, quota)

    quota = detect_quota(cgroup_root, proc_cgroup_file)
    return CpuBudget(combine_affinity_and_quota(affinity, quota), affinity, quota)


def combine_affinity_and_quota(affinity: int, quota: Optional[QuotaCores]) -> int:
    """min(affinity, ceil(quota cores)), clamped to at least 1."""
    if quota is None:
        return affinity
    return max(1, min(affinity, math.ceil(quota.value)))
