"""Timing harness: warmup iterations, timed iterations, stable report."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .executor import PlanRunner
from .plan import ExecutionPlan

DEFAULT_WARMUP = 10
DEFAULT_ITERS = 60
DEFAULT_JITTER_BOUND = 0.10


@dataclass(frozen=True)
class BenchProtocol:
    """How many untimed and timed iterations a measurement runs."""

    warmup_iters: int = DEFAULT_WARMUP
    timed_iters: int = DEFAULT_ITERS

    def __post_init__(self):
        if self.timed_iters < 1:
            raise ValueError("timed_iters must be at least 1")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must not be negative")


@dataclass(frozen=True)
class BenchReport:
    """Per-iteration wall time statistics for one plan execution."""

    warmup: int
    iterations: int
    mean_ms: float
    std_ms: float
    min_ms: float
    voxels_per_s: float
    times_ms: tuple[float, ...] = field(repr=False)

    @property
    def jitter(self) -> float:
        """Relative spread std/mean; high values mean a noisy machine."""
        return self.std_ms / self.mean_ms if self.mean_ms else 0.0

    def lines(self) -> list[str]:
        return [
            "warmup: %d" % self.warmup,
            "iterations: %d" % self.iterations,
            "mean_ms: %.4f" % self.mean_ms,
            "std_ms: %.4f" % self.std_ms,
            "min_ms: %.4f" % self.min_ms,
            "voxels_per_s: %.1f" % self.voxels_per_s,
        ]

    def format(self) -> str:
        return "\n".join(self.lines())


def synthetic_inputs(plan: ExecutionPlan, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded standard-normal arrays matching the plan's declared inputs."""
    rng = np.random.default_rng(seed)
    return {
        name: rng.standard_normal(tuple(dims), dtype=np.float32)
        for name, _, dims in plan.inputs
    }


def input_voxels(plan: ExecutionPlan) -> int:
    """Spatial voxels consumed per iteration, batch included."""
    total = 0
    for _, _, dims in plan.inputs:
        total += int(dims[0]) * int(np.prod(dims[2:]))
    return total


def bench_runner(runner: PlanRunner, inputs, protocol: BenchProtocol | None = None,
                 voxels: int | None = None) -> BenchReport:
    """Time ``runner.run(inputs)`` under the warmup/timed protocol."""
    protocol = protocol or BenchProtocol()
    for _ in range(protocol.warmup_iters):
        runner.run(inputs)
    times = np.empty(protocol.timed_iters)
    for i in range(protocol.timed_iters):
        t0 = time.perf_counter()
        runner.run(inputs)
        times[i] = time.perf_counter() - t0
    times_ms = times * 1e3
    mean_ms = float(times_ms.mean())
    if voxels is None:
        voxels = input_voxels(runner.plan)
    return BenchReport(
        warmup=protocol.warmup_iters,
        iterations=protocol.timed_iters,
        mean_ms=mean_ms,
        std_ms=float(times_ms.std()),
        min_ms=float(times_ms.min()),
        voxels_per_s=voxels / (mean_ms * 1e-3) if mean_ms else 0.0,
        times_ms=tuple(float(t) for t in times_ms),
    )


def bench_plan(plan: ExecutionPlan, protocol: BenchProtocol | None = None, *,
               backend=None, seed: int = 0) -> BenchReport:
    """Measure a plan on synthetic input."""
    runner = PlanRunner(plan, backend=backend)
    return bench_runner(runner, synthetic_inputs(plan, seed), protocol,
                        voxels=input_voxels(plan))


def jitter_warning(report: BenchReport,
                   bound: float = DEFAULT_JITTER_BOUND) -> str | None:
    """A human-readable warning when the measurement looks noisy."""
    if report.jitter > bound:
        return ("warning: std/mean = %.2f exceeds %.2f; "
                "the machine does not look idle"
                % (report.jitter, bound))
    return None


def parse_report(text: str) -> dict[str, float]:
    """Parse ``key: value`` report lines back into numbers."""
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, raw = line.partition(":")
        try:
            values[key.strip()] = float(raw.strip())
        except ValueError:
            continue
    return values
