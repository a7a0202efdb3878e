"""Command-line interface.

Subcommands:
  nproc      print the effective CPU count (affinity + cgroup quota) as a bare integer
  run        run a benchmark experiment (spawns synchronized worker processes)
  worker     internal: one benchmark process (driver + pool), handshakes on stdio
  report     aggregate a results directory into summary/ratio CSVs and plots
  fib-bench  compare the numba and pure-Python fib kernels
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from pathlib import Path

from . import cpu_detect, harness, kernels, report, workload
from .pool import FriendlyPool, PoolConfig, write_trace_csv


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nproc", help="print the effective CPU count")
    p.set_defaults(func=cmd_nproc)

    p = sub.add_parser("run", help="run one or more experiments")
    p.add_argument("--family", required=True, choices=harness.FAMILIES)
    p.add_argument("--strategy", required=True,
                   help="comma list of: ignorant, collaborative, optimal, static:N")
    p.add_argument("--neighbours", default="0", help="comma list of neighbour counts")
    p.add_argument("--rate", type=float, required=True, help="items/second per process")
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--fib-n", type=int, default=30)
    p.add_argument("--contention", action="store_true")
    p.add_argument("--overcommit", default="1", help="comma list of overcommit factors")
    p.add_argument("--cgroup", default=None, help="pre-created cgroup dir for quota runs")
    p.add_argument("--poll-interval", type=float, default=0.010)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("worker", help="internal benchmark worker process")
    p.add_argument("--strategy", required=True)
    p.add_argument("--threads", required=True, help="integer or 'dynamic'")
    p.add_argument("--cpus", type=int, required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--fib-n", type=int, required=True)
    p.add_argument("--contention", action="store_true")
    p.add_argument("--overcommit", type=float, default=1.0)
    p.add_argument("--poll-interval", type=float, default=0.010)
    p.add_argument("--samples-out", required=True)
    p.add_argument("--trace-out", required=True)
    p.add_argument("--result-out", required=True)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("report", help="summarize a results directory")
    p.add_argument("directory")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fib-bench", help="benchmark numba vs pure-Python fib kernels")
    p.add_argument("--n", default="20,25,28,30", help="comma list of fib arguments")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_fib_bench)

    return parser


def cmd_nproc(args) -> int:
    print(cpu_detect.effective_cpus().effective_cpus)
    return 0


def cmd_run(args) -> int:
    strategies = args.strategy.split(",")
    neighbour_counts = [int(x) for x in args.neighbours.split(",")]
    overcommits = [float(x) for x in args.overcommit.split(",")]
    for neighbours in neighbour_counts:
        for overcommit in overcommits:
            configs = [
                harness.ExperimentConfig(
                    family=args.family,
                    strategy=strategy,
                    neighbours=neighbours,
                    repeats=args.repeats,
                    duration=args.duration,
                    rate=args.rate,
                    fib_n=args.fib_n,
                    contention=args.contention,
                    overcommit=overcommit,
                    cgroup_path=args.cgroup,
                    poll_interval=args.poll_interval,
                )
                for strategy in strategies
            ]
            if len(configs) > 1:
                manifests = harness.run_interleaved(configs, args.out)
            else:
                manifests = [harness.run_experiment(configs[0], args.out)]
            for manifest in manifests:
                print(f"wrote manifest-{manifest.experiment_id}.json")
    return 0


def cmd_worker(args) -> int:
    kernels.warmup()
    lock = threading.Lock()
    lock_at = min(workload.DEFAULT_LOCK_AT, args.fib_n)

    def handler(item):
        return workload.process_item(item, args.contention, lock, lock_at)

    if args.threads == "dynamic":
        config = PoolConfig(
            max_threads=args.cpus,
            overcommit=args.overcommit,
            poll_interval=args.poll_interval,
            cpus=args.cpus,
        )
    else:
        n = int(args.threads)
        config = PoolConfig(max_threads=n, static_threads=n, cpus=args.cpus)
    pool = FriendlyPool(config, handler)

    print("READY", flush=True)
    line = sys.stdin.readline()
    if line.strip() != "GO":
        pool.shutdown(drain=False)
        print("expected GO on stdin", file=sys.stderr)
        return 1

    start_wall = time.time_ns()
    start_mono = time.monotonic_ns()
    driver_config = workload.DriverConfig(
        target_rate=args.rate,
        duration=args.duration,
        fib_n=args.fib_n,
        contention=args.contention,
    )
    driver_report = workload.open_loop_driver(driver_config, pool.submit)
    stats = pool.shutdown(drain=False)
    end_wall = time.time_ns()
    end_mono = time.monotonic_ns()

    workload.write_samples_csv(args.samples_out, pool.results())
    write_trace_csv(args.trace_out, stats.active_count_trace)
    result = {
        "strategy": args.strategy,
        "threads": args.threads,
        "cpus": args.cpus,
        "submitted": stats.submitted,
        "completed": stats.completed,
        "rescale_events": stats.rescale_events,
        "emitted": driver_report.emitted,
        "driver_lag_events": driver_report.driver_lag_events,
        "start_wall_ns": start_wall,
        "end_wall_ns": end_wall,
        "start_mono_ns": start_mono,
        "end_mono_ns": end_mono,
        "kernel_backend": kernels.KERNEL_BACKEND,
    }
    Path(args.result_out).write_text(json.dumps(result, indent=2))
    print("DONE", flush=True)
    return 0


def cmd_report(args) -> int:
    summary_path, ratio_path = report.report_directory(args.directory, plot=args.plot)
    print(f"wrote {summary_path}")
    if ratio_path:
        print(f"wrote {ratio_path}")
    return 0


def cmd_fib_bench(args) -> int:
    ns = [int(x) for x in args.n.split(",")]
    backends = [("python", kernels.fib_python)]
    if kernels.fib_numba is not None:
        backends.insert(0, ("numba", kernels.fib_numba))
    else:
        print("numba backend unavailable (not installed or disabled by "
              f"{kernels.PURE_PYTHON_ENV})", file=sys.stderr)
    print(f"{'n':>4} {'backend':>8} {'best_ms':>10} {'result':>12}")
    for n in ns:
        for name, fn in backends:
            fn(min(n, 5))  # warm dispatch
            best = float("inf")
            result = 0
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                result = fn(n)
                best = min(best, time.perf_counter() - t0)
            print(f"{n:>4} {name:>8} {best*1000:>10.3f} {result:>12}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
