import threading
import time

import pytest

from friendlypool.workload import (
    DriverConfig,
    WorkItem,
    calibrate_fib_n,
    fib,
    fib_contended,
    open_loop_driver,
    process_item,
    read_samples_csv,
    time_fib,
    to_latency_sample,
    write_samples_csv,
)


def fib_iterative(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


class TestFib:
    def test_base_cases(self):
        assert fib(0) == 0
        assert fib(1) == 1

    def test_against_iterative_oracle(self):
        for n in range(0, 31):
            assert fib(n) == fib_iterative(n)

    @pytest.mark.parametrize("n", [-1, 41, 100])
    def test_guard(self, n):
        with pytest.raises(ValueError):
            fib(n)


class TestFibContended:
    def test_below_lock_depth_never_locks(self):
        class MustNotLock:
            def __enter__(self):
                raise AssertionError("lock taken below lock depth")

            def __exit__(self, *exc):
                pass

        assert fib_contended(10, MustNotLock()) == 55

    def test_above_lock_depth_matches_plain_fib(self):
        lock = threading.Lock()
        assert fib_contended(32, lock) == fib(32)

    def test_guard(self):
        with pytest.raises(ValueError):
            fib_contended(41, threading.Lock())

    def test_lock_held_for_whole_subcomputation(self):
        lock = threading.Lock()
        n = 26
        single = time_fib(n)
        start = time.perf_counter()
        threads = [
            threading.Thread(target=fib_contended, args=(n, lock, n)) for _ in range(2)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        elapsed = time.perf_counter() - start
        # serialized: two items cannot overlap inside the locked region
        assert elapsed >= 1.8 * single


class TestProcessItem:
    def test_timestamps_ordered(self):
        item = WorkItem(id=0, fib_n=20, queue_start_ns=time.monotonic_ns())
        done = process_item(item)
        assert done.queue_start_ns <= done.fib_start_ns <= done.end_ns
        assert done.result == 6765

    def test_contended_result_matches(self):
        item = WorkItem(id=1, fib_n=20, queue_start_ns=time.monotonic_ns())
        done = process_item(item, contention=True, lock=threading.Lock(), lock_at=20)
        assert done.result == 6765

    def test_latency_sample_non_negative(self):
        item = process_item(WorkItem(id=2, fib_n=15, queue_start_ns=time.monotonic_ns()))
        sample = to_latency_sample(item)
        assert sample.queue_latency_ns >= 0
        assert sample.fib_latency_ns >= 0


class TestOpenLoopDriver:
    def test_emits_rate_times_duration(self):
        items = []
        report = open_loop_driver(
            DriverConfig(target_rate=100, duration=0.5, fib_n=1), items.append
        )
        assert abs(report.emitted - 50) <= 1
        assert report.emitted == len(items)

    def test_short_run_single_item(self):
        items = []
        report = open_loop_driver(
            DriverConfig(target_rate=10, duration=0.1, fib_n=1), items.append
        )
        assert report.emitted == 1

    def test_ids_sequential_and_timestamps_increasing(self):
        items = []
        open_loop_driver(DriverConfig(target_rate=200, duration=0.2, fib_n=1), items.append)
        assert [it.id for it in items] == list(range(len(items)))
        stamps = [it.queue_start_ns for it in items]
        assert stamps == sorted(stamps)

    def test_slow_sink_counts_lag_but_keeps_schedule(self):
        def slow_sink(item):
            time.sleep(0.03)

        report = open_loop_driver(
            DriverConfig(target_rate=100, duration=0.3, fib_n=1), slow_sink
        )
        # open loop: the full schedule is still emitted, lag is reported
        assert abs(report.emitted - 30) <= 1
        assert report.driver_lag_events > 0

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            DriverConfig(target_rate=0, duration=1)
        with pytest.raises(ValueError):
            DriverConfig(target_rate=10, duration=0)


def test_calibration_lands_in_window():
    n = calibrate_fib_n(low_s=0.002, high_s=0.050)
    assert 0 < n <= 40
    # re-measurement jitters near the boundary; allow 2x slack either side
    assert 0.001 <= time_fib(n) < 0.100


def test_samples_csv_round_trip(tmp_path):
    items = [
        WorkItem(id=1, queue_start_ns=10, fib_start_ns=20, end_ns=30),
        WorkItem(id=0, queue_start_ns=5, fib_start_ns=6, end_ns=9),
    ]
    path = tmp_path / "samples.csv"
    write_samples_csv(path, items)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,queue_start_ns,fib_start_ns,end_ns"
    loaded = read_samples_csv(path)
    assert [it.id for it in loaded] == [0, 1]  # sorted on write
    assert loaded[1].end_ns == 30
