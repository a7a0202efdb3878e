"""Aggregate per-process sample CSVs into percentile tables, ratios, and plots."""
from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple


class ReportError(RuntimeError):
    pass


def percentile(sorted_samples: Sequence, q: float):
    """Nearest-rank percentile over pre-sorted samples; q=0 gives the minimum."""
    if not sorted_samples:
        raise ReportError("percentile of empty sample set")
    if not 0.0 <= q <= 1.0:
        raise ReportError(f"percentile fraction must be in [0, 1], got {q}")
    n = len(sorted_samples)
    # exact ceil of q*n: Fraction avoids float-ceil drift at integer boundaries
    rank = max(1, math.ceil(Fraction(q) * n))
    return sorted_samples[min(n, rank) - 1]


def median(values: Sequence[float]) -> float:
    """Median; an even count averages the two central elements."""
    if not values:
        raise ReportError("median of empty sequence")
    return statistics.median(values)


def throughput(completed: int, duration: float) -> float:
    if duration <= 0:
        raise ReportError("duration must be positive")
    return completed / duration


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    neighbours: int
    threads: str
    overcommit: float
    contention: bool
    repeat: int
    process_index: int
    queue_p50: int
    queue_p90: int
    queue_p99: int
    queue_max: int
    fib_p50: int
    fib_p90: int
    fib_p99: int
    fib_max: int
    throughput: float


def _latency_stats(values: List[int]) -> Tuple[int, int, int, int]:
    values.sort()
    return (
        percentile(values, 0.50),
        percentile(values, 0.90),
        percentile(values, 0.99),
        values[-1],
    )


def _parse_samples(path) -> Tuple[List[Tuple[int, int]], int]:
    """Returns ([(queue_latency, fib_latency)], malformed_count)."""
    parsed = []
    malformed = 0
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader, None)  # header
        for row in reader:
            try:
                _, queue_start, fib_start, end = (int(x) for x in row)
                if fib_start < queue_start or end < fib_start:
                    raise ValueError
                parsed.append((fib_start - queue_start, end - fib_start))
            except (ValueError, TypeError):
                malformed += 1
    return parsed, malformed


def summarize(manifest) -> List[SummaryRow]:
    """Per-process, per-repeat latency percentiles and throughput.

    Malformed CSV rows are skipped and counted; more than 1% malformed in a
    file fails the summary outright.
    """
    config = manifest.config if not isinstance(manifest, dict) else manifest["config"]
    repeats = manifest.repeats if not isinstance(manifest, dict) else manifest["repeats"]
    rows = []
    for repeat_record in repeats:
        for proc_index, proc in enumerate(repeat_record["processes"]):
            samples, malformed = _parse_samples(proc["samples_csv"])
            total = len(samples) + malformed
            if total and malformed / total > 0.01:
                raise ReportError(
                    f"{proc['samples_csv']}: {malformed}/{total} malformed rows"
                )
            if not samples:
                continue
            queue_stats = _latency_stats([s[0] for s in samples])
            fib_stats = _latency_stats([s[1] for s in samples])
            rows.append(
                SummaryRow(
                    strategy=config["strategy"],
                    neighbours=config["neighbours"],
                    threads=str(config.get("threads", "")) or _threads_label(config),
                    overcommit=config["overcommit"],
                    contention=config["contention"],
                    repeat=repeat_record["repeat"],
                    process_index=proc_index,
                    queue_p50=queue_stats[0],
                    queue_p90=queue_stats[1],
                    queue_p99=queue_stats[2],
                    queue_max=queue_stats[3],
                    fib_p50=fib_stats[0],
                    fib_p90=fib_stats[1],
                    fib_p99=fib_stats[2],
                    fib_max=fib_stats[3],
                    throughput=throughput(len(samples), config["duration"]),
                )
            )
    return rows


def _threads_label(config: dict) -> str:
    strategy = config["strategy"]
    if strategy.startswith("static:"):
        return strategy.split(":", 1)[1]
    return "dynamic" if strategy == "collaborative" else strategy


SUMMARY_HEADER = [
    "strategy", "neighbours", "threads", "O", "metric",
    "p50", "p90", "p99", "max", "throughput", "repeat",
]


def write_summary_csv(path, rows: List[SummaryRow]) -> None:
    """Two lines per row: one for queue latency, one for fib latency."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            base = [row.strategy, row.neighbours, row.threads, f"{row.overcommit:g}"]
            tput = f"{row.throughput:.6f}"
            writer.writerow(
                base + ["queue_latency", row.queue_p50, row.queue_p90, row.queue_p99,
                        row.queue_max, tput, row.repeat]
            )
            writer.writerow(
                base + ["fib_latency", row.fib_p50, row.fib_p90, row.fib_p99,
                        row.fib_max, tput, row.repeat]
            )


# -- strategy comparison ratios -------------------------------------------


@dataclass(frozen=True)
class RatioRow:
    axis_value: int
    numerator: str
    denominator: str
    max_fib_latency_ratio: float
    throughput_ratio: float


def aggregate_throughput(rows: List[SummaryRow]) -> float:
    """Median over repeats of the summed per-process throughput."""
    by_repeat: Dict[int, float] = {}
    for row in rows:
        by_repeat[row.repeat] = by_repeat.get(row.repeat, 0.0) + row.throughput
    return median(list(by_repeat.values()))


def max_fib_latency(rows: List[SummaryRow]) -> int:
    return max(row.fib_max for row in rows)


def compare_strategies(rows: List[SummaryRow]) -> List[RatioRow]:
    """Ratio rows (first strategy / second, in encounter order) per neighbour count."""
    by_key: Dict[Tuple[int, str], List[SummaryRow]] = {}
    strategy_order: List[str] = []
    for row in rows:
        by_key.setdefault((row.neighbours, row.strategy), []).append(row)
        if row.strategy not in strategy_order:
            strategy_order.append(row.strategy)
    ratios = []
    if len(strategy_order) < 2:
        return ratios
    num, den = strategy_order[0], strategy_order[1]
    for neighbours in sorted({k[0] for k in by_key}):
        a = by_key.get((neighbours, num))
        b = by_key.get((neighbours, den))
        if not a or not b:
            continue
        ratios.append(
            RatioRow(
                axis_value=neighbours,
                numerator=num,
                denominator=den,
                max_fib_latency_ratio=max_fib_latency(a) / max_fib_latency(b),
                throughput_ratio=aggregate_throughput(a) / aggregate_throughput(b),
            )
        )
    return ratios


def write_ratio_csv(path, ratios: List[RatioRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["neighbours", "numerator", "denominator",
             "max_fib_latency_ratio", "throughput_ratio"]
        )
        for r in ratios:
            writer.writerow(
                [r.axis_value, r.numerator, r.denominator,
                 f"{r.max_fib_latency_ratio:.6f}", f"{r.throughput_ratio:.6f}"]
            )


# -- plotting -------------------------------------------------------------


def emit_plot(rows: List[SummaryRow], axis: str, out_path, metric: str = "fib") -> None:
    """Latency scatter (all repeats) and throughput median with min-max whiskers.

    ``axis`` is a SummaryRow attribute (e.g. "neighbours" or "threads").
    Output format follows the file extension; SVG by default.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not rows:
        raise ReportError("nothing to plot")
    fig, (ax_lat, ax_tput) = plt.subplots(2, 1, figsize=(6, 7), sharex=True)
    strategies = []
    for row in rows:
        if row.strategy not in strategies:
            strategies.append(row.strategy)
    for strategy in strategies:
        mine = [r for r in rows if r.strategy == strategy]
        xs = [_axis_value(r, axis) for r in mine]
        lat = [getattr(r, f"{metric}_p99") / 1e6 for r in mine]
        ax_lat.plot(xs, lat, "o", alpha=0.6, label=strategy)

        by_x: Dict[float, List[float]] = {}
        for r in mine:
            by_x.setdefault(_axis_value(r, axis), []).append(r.throughput)
        xs_u = sorted(by_x)
        med = [median(by_x[x]) for x in xs_u]
        err_low = [med[i] - min(by_x[x]) for i, x in enumerate(xs_u)]
        err_high = [max(by_x[x]) - med[i] for i, x in enumerate(xs_u)]
        ax_tput.errorbar(xs_u, med, yerr=[err_low, err_high], marker="o",
                         capsize=3, label=strategy)
    ax_lat.set_ylabel(f"{metric} latency p99 (ms)")
    ax_lat.legend()
    ax_tput.set_ylabel("throughput (items/s)")
    ax_tput.set_xlabel(axis)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def _axis_value(row: SummaryRow, axis: str) -> float:
    value = getattr(row, axis)
    if axis == "threads":
        return float(value) if value not in ("dynamic", "ignorant", "optimal") else 0.0
    return float(value)


# -- directory-level entry point ------------------------------------------


def report_directory(directory, plot: bool = False) -> Tuple[Path, Optional[Path]]:
    """Summarize every manifest in a directory into summary/ratio CSVs (+ plots)."""
    directory = Path(directory)
    manifests = sorted(directory.glob("manifest-*.json"))
    if not manifests:
        raise ReportError(f"no manifest-*.json files under {directory}")
    all_rows: List[SummaryRow] = []
    for path in manifests:
        all_rows.extend(summarize(json.loads(path.read_text())))
    summary_path = directory / "summary.csv"
    write_summary_csv(summary_path, all_rows)
    ratios = compare_strategies(all_rows)
    ratio_path: Optional[Path] = None
    if ratios:
        ratio_path = directory / "ratios.csv"
        write_ratio_csv(ratio_path, ratios)
    if plot:
        emit_plot(all_rows, "neighbours", directory / "summary.svg")
    return summary_path, ratio_path
