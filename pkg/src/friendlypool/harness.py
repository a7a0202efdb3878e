"""Experiment orchestrator: spawns synchronized worker processes and collects CSVs.

Each experiment repeat launches ``neighbours + 1`` identical worker
processes (re-executing this package's CLI in the ``worker`` subcommand),
synchronizes their start with a READY/GO handshake over the standard
streams, and gathers per-process sample CSVs, rescale traces, and a result
summary into a JSON manifest.
"""
from __future__ import annotations

import json
import logging
import platform
import queue
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional, Union

from .cpu_detect import effective_cpus
from .cputime import clock_ticks_per_second
from .kernels import KERNEL_BACKEND

logger = logging.getLogger(__name__)

FAMILIES = ("thread_sweep", "quota_sweep", "neighbour_sweep", "overcommit_sweep")
STRATEGIES = ("ignorant", "collaborative", "optimal")  # plus "static:N"

MIN_OVERLAP_FRACTION = 0.9
CHILD_GRACE_S = 60.0


class HarnessError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    strategy: str
    neighbours: int = 0
    repeats: int = 5
    duration: float = 5.0
    rate: float = 100.0
    fib_n: int = 30
    contention: bool = False
    overcommit: float = 1.0
    cgroup_path: Optional[str] = None
    poll_interval: float = 0.010

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        parse_strategy(self.strategy)
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.neighbours < 0:
            raise ValueError("neighbours must be >= 0")
        if self.duration <= 0 or self.rate <= 0:
            raise ValueError("duration and rate must be positive")

    def slug(self) -> str:
        s = self.strategy.replace(":", "")
        parts = [self.family, s, f"n{self.neighbours}", f"O{self.overcommit:g}"]
        if self.contention:
            parts.append("lock")
        return "-".join(parts)


def parse_strategy(strategy: str):
    """Validate a strategy string; returns ("static", n) for static:N."""
    if strategy in STRATEGIES:
        return (strategy, None)
    if strategy.startswith("static:"):
        n = int(strategy.split(":", 1)[1])
        if n < 1:
            raise ValueError("static thread count must be >= 1")
        return ("static", n)
    raise ValueError(f"unknown strategy {strategy!r}")


def strategy_thread_count(strategy: str, cpus: int, processes: int) -> Union[int, str]:
    """Thread count a strategy assigns to each of ``processes`` co-located processes."""
    if cpus < 1 or processes < 1:
        raise ValueError("cpus and processes must be >= 1")
    kind, n = parse_strategy(strategy)
    if kind == "ignorant":
        return cpus
    if kind == "optimal":
        return max(1, cpus // processes)
    if kind == "static":
        return n
    return "dynamic"


@dataclass
class RunManifest:
    experiment_id: str
    config: dict
    host: dict
    started_at: str
    finished_at: str
    repeats: List[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def load(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(**data)


def host_metadata() -> dict:
    budget = effective_cpus()
    return {
        "effective_cpus": budget.effective_cpus,
        "affinity_cpus": budget.affinity_cpus,
        "clock_tick_hz": clock_ticks_per_second(),
        "os_release": platform.release(),
        "kernel_backend": KERNEL_BACKEND,
    }


class _Child:
    """One worker subprocess with a dedicated stdout reader thread."""

    def __init__(self, cmd: List[str]):
        self.proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read, daemon=True)
        self._reader.start()

    def _read(self):
        for line in self.proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)  # EOF marker

    def wait_for(self, token: str, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return False
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                return False
            if line is None:
                return False
            if line.strip() == token:
                return True

    def send(self, line: str):
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def kill(self):
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()

    def stderr_tail(self) -> str:
        try:
            return self.proc.stderr.read()[-2000:]
        except Exception:
            return ""


def _assign_to_cgroup(cgroup_path: str, pids: List[int]) -> None:
    procs_file = Path(cgroup_path) / "cgroup.procs"
    try:
        for pid in pids:
            procs_file.write_text(f"{pid}\n")
    except OSError as exc:
        raise HarnessError(
            f"cannot move workers into cgroup {cgroup_path} ({exc}). Pre-create it with e.g.\n"
            f"  sudo mkdir {cgroup_path}\n"
            f"  echo '200000 100000' | sudo tee {cgroup_path}/cpu.max\n"
            f"  sudo chown -R $USER {cgroup_path}"
        ) from exc


def _worker_cmd(config: ExperimentConfig, threads, cpus: int, out_base: Path) -> List[str]:
    cmd = [
        sys.executable,
        "-m",
        "friendlypool",
        "worker",
        "--strategy", config.strategy,
        "--threads", str(threads),
        "--cpus", str(cpus),
        "--rate", str(config.rate),
        "--duration", str(config.duration),
        "--fib-n", str(config.fib_n),
        "--overcommit", str(config.overcommit),
        "--poll-interval", str(config.poll_interval),
        "--samples-out", str(out_base) + ".samples.csv",
        "--trace-out", str(out_base) + ".trace.csv",
        "--result-out", str(out_base) + ".result.json",
    ]
    if config.contention:
        cmd.append("--contention")
    return cmd


def spawn_neighbours(
    config: ExperimentConfig, cpus: int, out_bases: List[Path]
) -> List[_Child]:
    """Start one child per output base, all blocked on the READY/GO handshake.

    Any spawn or readiness failure kills the already-started children.
    """
    processes = len(out_bases)
    threads = strategy_thread_count(config.strategy, cpus, processes)
    children: List[_Child] = []
    try:
        for base in out_bases:
            children.append(_Child(_worker_cmd(config, threads, cpus, base)))
        if config.cgroup_path:
            _assign_to_cgroup(config.cgroup_path, [c.proc.pid for c in children])
        for child in children:
            if not child.wait_for("READY", timeout=CHILD_GRACE_S):
                raise HarnessError(
                    f"worker pid {child.proc.pid} never became ready; stderr: "
                    + child.stderr_tail()
                )
    except Exception:
        for child in children:
            child.kill()
        raise
    return children


def _run_repeat(config: ExperimentConfig, cpus: int, out_dir: Path, repeat: int) -> dict:
    bases = [
        out_dir / f"{config.slug()}-rep{repeat}-p{i}" for i in range(config.neighbours + 1)
    ]
    children = spawn_neighbours(config, cpus, bases)
    try:
        for child in children:
            child.send("GO")
        timeout = config.duration + CHILD_GRACE_S
        for child in children:
            if not child.wait_for("DONE", timeout=timeout):
                raise HarnessError(
                    f"worker pid {child.proc.pid} did not finish; stderr: "
                    + child.stderr_tail()
                )
        for child in children:
            child.proc.wait(timeout=CHILD_GRACE_S)
            if child.proc.returncode != 0:
                raise HarnessError(
                    f"worker exited with status {child.proc.returncode}; stderr: "
                    + child.stderr_tail()
                )
    except Exception:
        for child in children:
            child.kill()
        raise

    processes = []
    for base in bases:
        result = json.loads(Path(str(base) + ".result.json").read_text())
        processes.append(
            {
                "samples_csv": str(base) + ".samples.csv",
                "trace_csv": str(base) + ".trace.csv",
                "result": result,
            }
        )
    _check_overlap(processes, config.duration)
    return {"repeat": repeat, "processes": processes}


def _check_overlap(processes: List[dict], duration: float) -> None:
    starts = [p["result"]["start_wall_ns"] for p in processes]
    ends = [p["result"]["end_wall_ns"] for p in processes]
    overlap_ns = min(ends) - max(starts)
    if overlap_ns < MIN_OVERLAP_FRACTION * duration * 1e9:
        raise HarnessError(
            f"processes overlapped for only {overlap_ns/1e9:.2f}s of a {duration}s run"
        )


def _attempt_repeat(config: ExperimentConfig, cpus: int, out_dir: Path, repeat: int) -> dict:
    try:
        return _run_repeat(config, cpus, out_dir, repeat)
    except HarnessError as exc:
        logger.warning("repeat %d failed (%s); retrying once", repeat, exc)
        return _run_repeat(config, cpus, out_dir, repeat)


def run_experiment(config: ExperimentConfig, out_dir) -> RunManifest:
    """Run every repeat of one experiment configuration and write its manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    host = host_metadata()
    if host["affinity_cpus"] < 2:
        logger.warning(
            "host exposes %d CPU(s); multi-process results will show no CPU contention relief",
            host["affinity_cpus"],
        )
    cpus = host["effective_cpus"]
    started = _now_iso()
    repeats = [
        _attempt_repeat(config, cpus, out_dir, r) for r in range(config.repeats)
    ]
    manifest = RunManifest(
        experiment_id=config.slug(),
        config=asdict(config),
        host=host,
        started_at=started,
        finished_at=_now_iso(),
        repeats=repeats,
    )
    manifest_path = out_dir / f"manifest-{config.slug()}.json"
    manifest_path.write_text(manifest.to_json())
    return manifest


def run_interleaved(configs: List[ExperimentConfig], out_dir) -> List[RunManifest]:
    """Run several configs with repeats interleaved (A,B,A,B,...).

    Interleaving decorrelates thermal and background drift between the
    strategies being compared. All configs must declare the same repeat count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    repeat_counts = {c.repeats for c in configs}
    if len(repeat_counts) != 1:
        raise ValueError("interleaved configs must share a repeat count")
    host = host_metadata()
    cpus = host["effective_cpus"]
    started = _now_iso()
    collected: List[List[dict]] = [[] for _ in configs]
    for r in range(configs[0].repeats):
        for i, config in enumerate(configs):
            collected[i].append(_attempt_repeat(config, cpus, out_dir, r))
    manifests = []
    for config, repeats in zip(configs, collected):
        manifest = RunManifest(
            experiment_id=config.slug(),
            config=asdict(config),
            host=host,
            started_at=started,
            finished_at=_now_iso(),
            repeats=repeats,
        )
        (out_dir / f"manifest-{config.slug()}.json").write_text(manifest.to_json())
        manifests.append(manifest)
    return manifests


def _now_iso() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")
