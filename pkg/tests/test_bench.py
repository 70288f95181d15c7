"""Measurement protocol fidelity and report round-tripping."""

import numpy as np
import pytest

from voxplan.bench import (
    DEFAULT_ITERS,
    DEFAULT_JITTER_BOUND,
    DEFAULT_WARMUP,
    BenchProtocol,
    BenchReport,
    bench_plan,
    bench_runner,
    input_voxels,
    jitter_warning,
    parse_report,
    synthetic_inputs,
)
from voxplan.plan import compile_network
from voxplan.zoo import ZooConfig, generate_zoo


class CountingRunner:
    """Stand-in runner that records how often it is invoked."""

    def __init__(self, plan):
        self.plan = plan
        self.calls = 0

    def run(self, inputs):
        self.calls += 1
        return {"out": None}


def _tiny_plan():
    spec, store = generate_zoo(ZooConfig("residual", levels=2,
                                         input_spatial=(8, 8, 8)))
    plan, _ = compile_network(spec, store)
    return plan


def test_protocol_defaults_are_ten_plus_sixty():
    proto = BenchProtocol()
    assert proto.warmup_iters == DEFAULT_WARMUP == 10
    assert proto.timed_iters == DEFAULT_ITERS == 60


def test_protocol_rejects_degenerate_counts():
    with pytest.raises(ValueError):
        BenchProtocol(timed_iters=0)
    with pytest.raises(ValueError):
        BenchProtocol(warmup_iters=-1)


def test_default_protocol_invokes_seventy_runs():
    runner = CountingRunner(_tiny_plan())
    report = bench_runner(runner, {}, voxels=1)
    assert runner.calls == DEFAULT_WARMUP + DEFAULT_ITERS == 70
    assert report.warmup == 10
    assert report.iterations == 60
    assert len(report.times_ms) == 60


def test_custom_protocol_invokes_exact_counts():
    runner = CountingRunner(_tiny_plan())
    report = bench_runner(runner, {}, BenchProtocol(3, 7), voxels=1)
    assert runner.calls == 10
    assert report.warmup == 3 and report.iterations == 7


def test_report_statistics_consistent():
    plan = _tiny_plan()
    report = bench_plan(plan, BenchProtocol(0, 5))
    times = np.array(report.times_ms)
    assert report.mean_ms == pytest.approx(times.mean())
    assert report.min_ms == pytest.approx(times.min())
    assert report.min_ms <= report.mean_ms
    assert report.voxels_per_s == pytest.approx(
        input_voxels(plan) / (report.mean_ms * 1e-3))


def test_synthetic_inputs_match_plan_and_seed():
    plan = _tiny_plan()
    a = synthetic_inputs(plan, seed=3)
    b = synthetic_inputs(plan, seed=3)
    c = synthetic_inputs(plan, seed=4)
    assert set(a) == {name for name, _, _ in plan.inputs}
    for name, _, dims in plan.inputs:
        assert a[name].shape == tuple(dims)
        assert a[name].dtype == np.float32
        assert np.array_equal(a[name], b[name])
        assert not np.array_equal(a[name], c[name])


def test_input_voxels_counts_batch_times_spatial():
    plan = _tiny_plan()
    assert input_voxels(plan) == 8 * 8 * 8


def test_report_lines_parse_back():
    report = BenchReport(warmup=10, iterations=60, mean_ms=12.5,
                         std_ms=0.5, min_ms=11.875, voxels_per_s=32768.0,
                         times_ms=(12.5,) * 60)
    parsed = parse_report(report.format())
    assert parsed["warmup"] == 10
    assert parsed["iterations"] == 60
    assert parsed["mean_ms"] == pytest.approx(12.5)
    assert parsed["std_ms"] == pytest.approx(0.5)
    assert parsed["min_ms"] == pytest.approx(11.875)
    assert parsed["voxels_per_s"] == pytest.approx(32768.0)


def test_parse_report_skips_foreign_lines():
    text = "backend: compiled\nmean_ms: 3.5\n\nnot a pair\n"
    parsed = parse_report(text)
    assert parsed == {"mean_ms": pytest.approx(3.5)}


def test_jitter_warning_threshold():
    steady = BenchReport(10, 60, 10.0, 0.5, 9.5, 1.0, (10.0,) * 60)
    noisy = BenchReport(10, 60, 10.0, 2.0, 8.0, 1.0, (10.0,) * 60)
    assert steady.jitter == pytest.approx(0.05)
    assert jitter_warning(steady) is None
    assert jitter_warning(steady, bound=0.01) is not None
    warning = jitter_warning(noisy, DEFAULT_JITTER_BOUND)
    assert warning is not None and "0.20" in warning
