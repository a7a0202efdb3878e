"""friendlypool: a neighbour- and quota-aware threadpool with a benchmark harness."""

from .cpu_detect import (
    CgroupParseError,
    CpuBudget,
    QuotaCores,
    QuotaSource,
    affinity_cpu_count,
    effective_cpus,
    parse_cgroup_v1_quota,
    parse_cgroup_v2_cpu_max,
)
from .cputime import CpuTimeSample, sample_cpu_times
from .pool import (
    FriendlyPool,
    PoolConfig,
    PoolShutdownError,
    PoolStats,
    compute_active_threads,
)
from .workload import (
    DriverConfig,
    DriverReport,
    LatencySample,
    WorkItem,
    fib,
    fib_contended,
    open_loop_driver,
    process_item,
)

__all__ = [
    "CgroupParseError",
    "CpuBudget",
    "CpuTimeSample",
    "DriverConfig",
    "DriverReport",
    "FriendlyPool",
    "LatencySample",
    "PoolConfig",
    "PoolShutdownError",
    "PoolStats",
    "QuotaCores",
    "QuotaSource",
    "WorkItem",
    "affinity_cpu_count",
    "compute_active_threads",
    "effective_cpus",
    "fib",
    "fib_contended",
    "open_loop_driver",
    "parse_cgroup_v1_quota",
    "parse_cgroup_v2_cpu_max",
    "process_item",
    "sample_cpu_times",
]

__version__ = "0.1.0"
