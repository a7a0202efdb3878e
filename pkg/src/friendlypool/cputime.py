"""Cumulative CPU-time sampling from /proc.

The pool's control loop needs two counters in a common unit (clock ticks):
the CPU time consumed by this process across all of its threads, and the
non-idle CPU time consumed by the whole system across all CPUs. Their
interval deltas give the process's share of machine CPU time.

This is the single platform-specific seam in the package; tests and the
pool accept any callable returning a CpuTimeSample.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class CpuTimeSample:
    self_time: int  # clock ticks: utime+stime of this process, all threads
    all_time: int  # clock ticks: non-idle time summed over every CPU
    taken_at_ns: int  # monotonic timestamp


def _process_ticks(stat_text: str) -> int:
    # comm (field 2) may contain spaces or parens; fields resume after the
    # last ')'. utime/stime are overall fields 14/15, i.e. 11/12 after state.
    rest = stat_text.rsplit(")", 1)[1].split()
    return int(rest[11]) + int(rest[12])


def _system_ticks(stat_text: str) -> int:
    # Aggregate "cpu" line: user nice system idle iowait irq softirq steal ...
    fields = stat_text.splitlines()[0].split()
    if fields[0] != "cpu":
        raise ValueError("system stat file does not start with aggregate cpu line")
    user, nice, system, _idle, _iowait, irq, softirq, steal = (int(x) for x in fields[1:9])
    return user + nice + system + irq + softirq + steal


def sample_cpu_times(proc_root: str = "/proc") -> CpuTimeSample:
    """Read both counters; raises OSError/ValueError if /proc is unreadable."""
    self_ticks = _process_ticks(Path(proc_root, "self", "stat").read_text())
    all_ticks = _system_ticks(Path(proc_root, "stat").read_text())
    return CpuTimeSample(self_ticks, all_ticks, time.monotonic_ns())


def clock_ticks_per_second() -> int:
    try:
        return os.sysconf("SC_CLK_TCK")
    except (ValueError, OSError):
        return 100
