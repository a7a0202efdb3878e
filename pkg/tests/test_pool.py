import itertools
import math
import threading
import time
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from friendlypool.cputime import CpuTimeSample
from friendlypool.pool import (
    FriendlyPool,
    PoolConfig,
    PoolShutdownError,
    compute_active_threads,
    read_trace_csv,
    write_trace_csv,
)


class TestComputeActiveThreads:
    def test_alone_on_host_uses_everything(self):
        assert compute_active_threads(1.0, 100, 100, 16, 16) == 16

    def test_even_split_with_one_neighbour(self):
        assert compute_active_threads(1.0, 50, 100, 16, 16) == 8

    def test_overcommit_factor_scales_up(self):
        # ceil(1.25 * 0.5 * 16) = 10
        assert compute_active_threads(1.25, 50, 100, 16, 16) == 10

    def test_lower_clamp(self):
        # ceil(0.01 * 16) = 1
        assert compute_active_threads(1.0, 1, 100, 16, 16) == 1

    def test_idle_interval_opens_fully(self):
        assert compute_active_threads(1.0, 0, 0, 16, 16) == 16

    def test_upper_clamp(self):
        assert compute_active_threads(4.0, 100, 100, 16, 16) == 16

    @given(
        overcommit=st.floats(0.01, 8.0, allow_nan=False),
        self_delta=st.integers(0, 10**6),
        all_delta=st.integers(0, 10**6),
        cpus=st.integers(1, 256),
        max_threads=st.integers(1, 1024),
    )
    def test_matches_exact_rational_oracle(self, overcommit, self_delta, all_delta, cpus, max_threads):
        got = compute_active_threads(overcommit, self_delta, all_delta, cpus, max_threads)
        if all_delta == 0:
            expected = max_threads
        else:
            exact = Fraction(overcommit) * Fraction(self_delta, all_delta) * cpus
            expected = min(max_threads, max(1, math.ceil(exact)))
        assert got == expected
        assert 1 <= got <= max_threads


def make_scripted_sampler(script):
    """Sampler yielding cumulative counters from per-tick (self, all) deltas.

    The last delta repeats forever.
    """
    lock = threading.Lock()
    state = {"self": 0, "all": 0, "it": iter(script), "last": script[-1]}

    def sampler():
        with lock:
            delta = next(state["it"], state["last"])
            state["self"] += delta[0]
            state["all"] += delta[1]
            return CpuTimeSample(state["self"], state["all"], time.monotonic_ns())

    return sampler


def idle_sampler():
    return make_scripted_sampler([(0, 0)])


class TestPoolLifecycle:
    def test_static_pool_processes_everything(self):
        pool = FriendlyPool(PoolConfig(max_threads=1, static_threads=1), lambda x: x * 2)
        for i in range(100):
            pool.submit(i)
        stats = pool.shutdown(drain=True)
        assert stats.submitted == 100
        assert stats.completed == 100
        assert sorted(pool.results()) == [i * 2 for i in range(100)]

    def test_static_zero_rejected(self):
        with pytest.raises(ValueError):
            PoolConfig(max_threads=4, static_threads=0)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            PoolConfig(max_threads=0)
        with pytest.raises(ValueError):
            PoolConfig(max_threads=4, overcommit=0)
        with pytest.raises(ValueError):
            PoolConfig(max_threads=4, static_threads=5)

    def test_collaborative_starts_fully_active(self):
        pool = FriendlyPool(PoolConfig(max_threads=4), lambda x: x, sampler=idle_sampler())
        try:
            assert pool.active_count == 4
        finally:
            pool.shutdown()

    def test_submit_after_shutdown_rejected(self):
        pool = FriendlyPool(PoolConfig(max_threads=1, static_threads=1), lambda x: x)
        pool.shutdown()
        with pytest.raises(PoolShutdownError):
            pool.submit(1)

    def test_double_shutdown_rejected(self):
        pool = FriendlyPool(PoolConfig(max_threads=1, static_threads=1), lambda x: x)
        pool.shutdown()
        with pytest.raises(PoolShutdownError):
            pool.shutdown()

    def test_shutdown_without_drain_drops_queued(self):
        def slow(x):
            time.sleep(0.05)
            return x

        pool = FriendlyPool(PoolConfig(max_threads=1, static_threads=1), slow)
        for i in range(10):
            pool.submit(i)
        time.sleep(0.06)  # let the worker get in-flight
        stats = pool.shutdown(drain=False)
        assert stats.completed < stats.submitted

    def test_idle_shutdown_is_prompt(self):
        pool = FriendlyPool(
            PoolConfig(max_threads=4, poll_interval=0.05), lambda x: x, sampler=idle_sampler()
        )
        t0 = time.monotonic()
        pool.shutdown()
        assert time.monotonic() - t0 < 0.1  # two poll intervals

    def test_results_before_shutdown_rejected(self):
        pool = FriendlyPool(PoolConfig(max_threads=1, static_threads=1), lambda x: x)
        with pytest.raises(RuntimeError):
            pool.results()
        pool.shutdown()


class TestConservation:
    def test_concurrent_producers_no_loss_no_duplication(self):
        pool = FriendlyPool(PoolConfig(max_threads=4, static_threads=4), lambda x: x)
        n_producers, per_producer = 4, 250

        def produce(base):
            for i in range(per_producer):
                pool.submit(base + i)

        producers = [
            threading.Thread(target=produce, args=(p * per_producer,))
            for p in range(n_producers)
        ]
        for t in producers:
            t.start()
        for t in producers:
            t.join()
        stats = pool.shutdown(drain=True)
        assert stats.submitted == stats.completed == n_producers * per_producer
        assert sorted(pool.results()) == list(range(n_producers * per_producer))

    def test_no_thread_churn_while_running(self):
        pool = FriendlyPool(
            PoolConfig(max_threads=4, poll_interval=0.01), lambda x: x, sampler=idle_sampler()
        )
        counts = set()
        for i in range(50):
            pool.submit(i)
            counts.add(threading.active_count())
            time.sleep(0.002)
        pool.shutdown(drain=True)
        assert len(counts) == 1


class TestRescaling:
    def test_deactivated_workers_park(self):
        # ratio 1/8 on 4 cpus -> ceil(0.5) = 1 active worker
        sampler = make_scripted_sampler([(0, 0), (1, 8)])
        seen = set()

        def handler(x):
            seen.add(threading.current_thread().name)
            return x

        pool = FriendlyPool(PoolConfig(max_threads=4, poll_interval=0.01), handler, sampler=sampler)
        time.sleep(0.08)  # several control ticks
        assert pool.active_count == 1
        for i in range(50):
            pool.submit(i)
        stats = pool.shutdown(drain=True)
        assert stats.completed == 50
        assert seen == {"friendly-worker-0"}

    def test_neighbour_arrival_shrinks_within_three_ticks(self):
        # 6 ticks alone (ratio 1), then a neighbour takes half the machine
        sampler = make_scripted_sampler([(10, 10)] * 6 + [(5, 10)])
        pool = FriendlyPool(
            PoolConfig(max_threads=16, poll_interval=0.01, cpus=16), lambda x: x, sampler=sampler
        )
        time.sleep(0.25)
        stats = pool.shutdown()
        trace = [count for _, count in stats.active_count_trace]
        assert 16 in trace and 8 in trace
        assert set(trace) == {16, 8}  # rescale settles in one tick, no overshoot
        assert all(c == 8 for c in trace[trace.index(8):])

    def test_neighbour_departure_reopens(self):
        sampler = make_scripted_sampler([(10, 10)] * 3 + [(5, 10)] * 5 + [(10, 10)])
        pool = FriendlyPool(
            PoolConfig(max_threads=16, poll_interval=0.01, cpus=16), lambda x: x, sampler=sampler
        )
        time.sleep(0.3)
        stats = pool.shutdown()
        trace = [count for _, count in stats.active_count_trace]
        assert trace[-1] == 16
        assert 8 in trace
        assert stats.rescale_events >= 2

    def test_sampler_failure_keeps_active_count(self):
        calls = itertools.count()

        def flaky():
            n = next(calls)
            if n >= 2:
                raise OSError("counters vanished")
            return CpuTimeSample(n, 100, time.monotonic_ns())

        pool = FriendlyPool(PoolConfig(max_threads=4, poll_interval=0.01), lambda x: x, sampler=flaky)
        time.sleep(0.05)
        assert pool.active_count == 4
        pool.shutdown()

    def test_active_count_always_in_bounds(self):
        sampler = make_scripted_sampler([(i % 11, 10) for i in range(30)])
        pool = FriendlyPool(
            PoolConfig(max_threads=8, poll_interval=0.005, cpus=8), lambda x: x, sampler=sampler
        )
        for _ in range(40):
            assert 1 <= pool.active_count <= 8
            time.sleep(0.005)
        stats = pool.shutdown()
        assert all(1 <= c <= 8 for _, c in stats.active_count_trace)


def test_trace_csv_round_trip(tmp_path):
    trace = [(1000, 4), (2000, 2), (3000, 1)]
    path = tmp_path / "trace.csv"
    write_trace_csv(path, trace)
    assert path.read_text().splitlines()[0] == "timestamp_ns,active_count"
    assert read_trace_csv(path) == trace
