"""The friendlypool: a work-queue threadpool that rescales its active workers.

All worker threads are created at startup and never destroyed until
shutdown. A control thread periodically samples CPU-time counters and sets
the number of workers allowed to dequeue to

    active = clamp(ceil(O * (self_delta / all_delta) * cpus), 1, max_threads)

so a process sharing the machine with busy neighbours shrinks to its fair
share of CPUs instead of overcommitting. Deactivated workers finish their
in-flight item and then park; the highest-indexed workers park first, so
worker 0 is always active.
"""
from __future__ import annotations

import logging
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Tuple

from .cputime import CpuTimeSample, sample_cpu_times

logger = logging.getLogger(__name__)


class PoolShutdownError(RuntimeError):
    """Raised on submit after shutdown, or on a second shutdown call."""


@dataclass(frozen=True)
class PoolConfig:
    """Pool sizing and control-loop settings.

    ``static_threads`` pins the active count and disables the control thread;
    when None the pool runs in collaborative mode.
    """

    max_threads: int
    overcommit: float = 1.0
    poll_interval: float = 0.010
    static_threads: Optional[int] = None
    cpus: Optional[int] = None  # CPUs in the scaling formula; defaults to max_threads

    def __post_init__(self):
        if self.max_threads < 1:
            raise ValueError("max_threads must be >= 1")
        if self.overcommit <= 0:
            raise ValueError("overcommit factor must be positive")
        if self.poll_interval <= 0:
            raise ValueError("poll_interval must be positive")
        if self.static_threads is not None and not (1 <= self.static_threads <= self.max_threads):
            raise ValueError(
                f"static thread count {self.static_threads} outside [1, {self.max_threads}]"
            )
        if self.cpus is not None and self.cpus < 1:
            raise ValueError("cpus must be >= 1")


@dataclass
class PoolStats:
    submitted: int = 0
    completed: int = 0
    rescale_events: int = 0
    active_count_trace: List[Tuple[int, int]] = field(default_factory=list)


def compute_active_threads(
    overcommit, self_delta, all_delta, cpus: int, max_threads: int
) -> int:
    """Desired active workers for one control interval.

    Exact rational arithmetic; an idle interval (all_delta == 0) means no
    observed contention, so the pool opens fully.
    """
    if all_delta <= 0:
        return max_threads
    wanted = math.ceil(Fraction(overcommit) * Fraction(self_delta) / Fraction(all_delta) * cpus)
    return max(1, min(max_threads, wanted))


class FriendlyPool:
    """MPMC FIFO threadpool with neighbour-aware worker activation.

    ``handler`` is called on a worker thread for each submitted item; its
    return value is kept in a per-worker buffer retrievable via ``results()``
    after shutdown.
    """

    def __init__(
        self,
        config: PoolConfig,
        handler: Callable,
        sampler: Callable[[], CpuTimeSample] = sample_cpu_times,
    ):
        self._config = config
        self._handler = handler
        self._sampler = sampler
        self._cpus = config.cpus if config.cpus is not None else config.max_threads

        self._cond = threading.Condition()
        self._queue: deque = deque()
        self._shutdown = False
        self._drain = True
        self._finished = False
        self._stats = PoolStats()
        if config.static_threads is not None:
            self._active_count = config.static_threads
        else:
            self._active_count = config.max_threads

        self._buffers: List[list] = [[] for _ in range(config.max_threads)]
        self._workers: List[threading.Thread] = []
        self._stop_control = threading.Event()
        self._control_thread: Optional[threading.Thread] = None
        try:
            for i in range(config.max_threads):
                t = threading.Thread(
                    target=self._worker_loop, args=(i,), name=f"friendly-worker-{i}"
                )
                t.start()
                self._workers.append(t)
        except Exception:
            with self._cond:
                self._shutdown = True
                self._drain = False
                self._cond.notify_all()
            for t in self._workers:
                t.join()
            raise
        if config.static_threads is None:
            self._control_thread = threading.Thread(
                target=self._control_loop, name="friendly-control"
            )
            self._control_thread.start()

    @property
    def active_count(self) -> int:
        return self._active_count

    @property
    def config(self) -> PoolConfig:
        return self._config

    def submit(self, item) -> None:
        with self._cond:
            if self._shutdown:
                raise PoolShutdownError("submit after shutdown")
            self._queue.append(item)
            self._stats.submitted += 1
            self._cond.notify()

    def shutdown(self, drain: bool = True) -> PoolStats:
        """Stop the pool and join every thread. Call at most once.

        With ``drain`` the queue is emptied by the currently active workers
        first; without it, only in-flight items are finished and queued items
        are discarded.
        """
        with self._cond:
            if self._shutdown:
                raise PoolShutdownError("pool already shut down")
            self._shutdown = True
            self._drain = drain
            if not drain:
                self._queue.clear()
            self._cond.notify_all()
        if self._control_thread is not None:
            self._stop_control.set()
            self._control_thread.join()
        for t in self._workers:
            t.join()
        self._finished = True
        return self._stats

    def results(self) -> list:
        """Handler return values merged across workers; call after shutdown."""
        if not self._finished:
            raise RuntimeError("results() is only valid after shutdown")
        merged = []
        for buf in self._buffers:
            merged.extend(buf)
        return merged

    def stats(self) -> PoolStats:
        return self._stats

    # -- worker side ------------------------------------------------------

    def _worker_loop(self, index: int) -> None:
        buffer = self._buffers[index]
        while True:
            with self._cond:
                while True:
                    if self._shutdown and (not self._drain or not self._queue):
                        return
                    if index < self._active_count and self._queue:
                        item = self._queue.popleft()
                        if not self._queue:
                            # wake parked workers so they can observe a
                            # drained queue and exit during shutdown
                            self._cond.notify_all()
                        break
                    self._cond.wait()
            result = self._handler(item)
            buffer.append(result)
            with self._cond:
                self._stats.completed += 1

    # -- control side -----------------------------------------------------

    def _control_loop(self) -> None:
        prev: Optional[CpuTimeSample] = None
        try:
            prev = self._sampler()
        except Exception as exc:
            logger.warning("initial CPU-time sample failed: %s", exc)
        while not self._stop_control.wait(self._config.poll_interval):
            prev = self.control_tick(prev)

    def control_tick(self, prev: Optional[CpuTimeSample]) -> Optional[CpuTimeSample]:
        """One control-loop step: sample, rescale, record, return the new sample.

        A failed sample keeps the previous active count and the previous
        sample, so the next tick still has a valid baseline.
        """
        try:
            cur = self._sampler()
        except Exception as exc:
            logger.warning("CPU-time sample failed, keeping active_count: %s", exc)
            return prev
        if prev is None:
            self._stats.active_count_trace.append((time.monotonic_ns(), self._active_count))
            return cur
        self_delta = cur.self_time - prev.self_time
        all_delta = cur.all_time - prev.all_time
        new_count = compute_active_threads(
            self._config.overcommit, self_delta, all_delta, self._cpus, self._config.max_threads
        )
        with self._cond:
            if new_count != self._active_count:
                self._active_count = new_count
                self._stats.rescale_events += 1
                self._cond.notify_all()
        self._stats.active_count_trace.append((time.monotonic_ns(), new_count))
        return cur


def write_trace_csv(path, trace) -> None:
    """Rescale trace as ``timestamp_ns,active_count`` rows."""
    with open(path, "w") as f:
        f.write("timestamp_ns,active_count\n")
        for ts, count in trace:
            f.write(f"{ts},{count}\n")


def read_trace_csv(path) -> List[Tuple[int, int]]:
    trace = []
    with open(path) as f:
        header = f.readline()
        if header.strip() != "timestamp_ns,active_count":
            raise ValueError(f"unexpected trace header: {header!r}")
        for line in f:
            ts, count = line.strip().split(",")
            trace.append((int(ts), int(count)))
    return trace
