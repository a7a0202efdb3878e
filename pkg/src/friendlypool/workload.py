"""Benchmark workload: naive fibonacci items driven open-loop at a fixed rate.

Each item carries three monotonic timestamps: when it was enqueued, when a
worker pulled it, and when its computation finished. Queue latency and fib
latency are derived from those. The optional contended variant serializes
the whole fib computation behind one process-wide lock.
"""
from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass
from typing import Callable, List, Optional

from .kernels import fib_kernel

MAX_FIB_N = 40
DEFAULT_LOCK_AT = 30


@dataclass
class WorkItem:
    id: int
    fib_n: int = 30
    queue_start_ns: int = 0
    fib_start_ns: int = 0
    end_ns: int = 0
    result: int = 0


@dataclass(frozen=True)
class LatencySample:
    id: int
    queue_latency_ns: int
    fib_latency_ns: int


@dataclass(frozen=True)
class DriverConfig:
    target_rate: float  # items per second
    duration: float = 5.0
    fib_n: int = 30
    contention: bool = False

    def __post_init__(self):
        if self.target_rate <= 0:
            raise ValueError("target_rate must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


@dataclass
class DriverReport:
    emitted: int
    driver_lag_events: int


def fib(n: int) -> int:
    """Naive fibonacci via the hot kernel. Guarded to keep runtimes sane."""
    if not 0 <= n <= MAX_FIB_N:
        raise ValueError(f"fib argument must be in [0, {MAX_FIB_N}], got {n}")
    return fib_kernel(n)


def fib_contended(n: int, lock: threading.Lock, lock_at: int = DEFAULT_LOCK_AT) -> int:
    """fib, but the entire fib(lock_at) subcomputation holds the global lock.

    Calls at other depths never touch the lock; above lock_at the recursion
    runs at the Python level until it reaches the locked depth.
    """
    if not 0 <= n <= MAX_FIB_N:
        raise ValueError(f"fib argument must be in [0, {MAX_FIB_N}], got {n}")
    if n == lock_at:
        with lock:
            return fib_kernel(n)
    if n < lock_at:
        return fib_kernel(n)
    return fib_contended(n - 1, lock, lock_at) + fib_contended(n - 2, lock, lock_at)


def process_item(
    item: WorkItem,
    contention: bool = False,
    lock: Optional[threading.Lock] = None,
    lock_at: int = DEFAULT_LOCK_AT,
) -> WorkItem:
    """Worker-side execution: stamp dequeue time, compute, stamp completion."""
    item.fib_start_ns = time.monotonic_ns()
    if contention:
        item.result = fib_contended(item.fib_n, lock, lock_at)
    else:
        item.result = fib(item.fib_n)
    item.end_ns = time.monotonic_ns()
    return item


def to_latency_sample(item: WorkItem) -> LatencySample:
    return LatencySample(
        id=item.id,
        queue_latency_ns=item.fib_start_ns - item.queue_start_ns,
        fib_latency_ns=item.end_ns - item.fib_start_ns,
    )


def open_loop_driver(config: DriverConfig, sink: Callable[[WorkItem], None]) -> DriverReport:
    """Emit items on a fixed schedule anchored to the start time.

    The schedule never slows down when the consumer lags (open loop, no
    coordinated omission). If the driver itself falls more than one interval
    behind, the backlog is emitted immediately and counted as a lag event so
    saturated-driver runs are identifiable.
    """
    interval = 1.0 / config.target_rate
    start = time.monotonic()
    deadline = start + config.duration
    emitted = 0
    lag_events = 0
    while True:
        scheduled = start + emitted * interval
        if scheduled >= deadline:
            break
        now = time.monotonic()
        if now < scheduled:
            time.sleep(scheduled - now)
        elif now - scheduled > interval:
            lag_events += 1
        item = WorkItem(id=emitted, fib_n=config.fib_n, queue_start_ns=time.monotonic_ns())
        sink(item)
        emitted += 1
    return DriverReport(emitted=emitted, driver_lag_events=lag_events)


# -- calibration ----------------------------------------------------------


def time_fib(n: int, repeats: int = 3) -> float:
    """Best-of-N wall time of one fib(n) call, in seconds."""
    fib(n)  # warm dispatch/compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fib(n)
        best = min(best, time.perf_counter() - t0)
    return best


def calibrate_fib_n(low_s: float = 0.005, high_s: float = 0.020, start: int = 18) -> int:
    """Smallest n whose single-call runtime lands in [low_s, high_s].

    Runtime grows by the golden ratio per increment, so the window (4x wide)
    always contains at least one n. Returns the first n at or above low_s.
    """
    for n in range(start, MAX_FIB_N + 1):
        t = time_fib(n, repeats=5)
        if t >= low_s:
            return n
    return MAX_FIB_N


def single_thread_capacity(fib_n: int) -> float:
    """Items/second one uncontended worker can sustain."""
    return 1.0 / time_fib(fib_n)


# -- sample persistence ---------------------------------------------------

SAMPLES_HEADER = ["id", "queue_start_ns", "fib_start_ns", "end_ns"]


def write_samples_csv(path, items: List[WorkItem]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SAMPLES_HEADER)
        for item in sorted(items, key=lambda it: it.id):
            writer.writerow([item.id, item.queue_start_ns, item.fib_start_ns, item.end_ns])


def read_samples_csv(path) -> List[WorkItem]:
    items = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != SAMPLES_HEADER:
            raise ValueError(f"unexpected samples header: {header}")
        for row in reader:
            item_id, queue_start, fib_start, end = (int(x) for x in row)
            items.append(
                WorkItem(id=item_id, queue_start_ns=queue_start, fib_start_ns=fib_start, end_ns=end)
            )
    return items
