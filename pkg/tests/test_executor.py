"""Whole-plan execution against the naive network oracle."""

import numpy as np
import pytest

from voxplan.backend import available_backends
from voxplan.errors import ExecutionError
from voxplan.executor import PlanRunner, execute
from voxplan.formats import WeightStore
from voxplan.netspec import LayerKind, LayerSpec, NetworkSpec
from voxplan.oracle import ref_run
from voxplan.plan import compile_network
from voxplan.zoo import ZooConfig, generate_zoo

BACKENDS = available_backends()


def _identity_net():
    spec = NetworkSpec("ident", (
        LayerSpec("in", LayerKind.INPUT, (), ("data",),
                  dict(shape=(1, 1, 5, 5, 5))),
        LayerSpec("c", LayerKind.CONVOLUTION, ("data",), ("out",),
                  dict(num_output=1, kernel=(1, 1, 1), stride=(1, 1, 1),
                       pad=(0, 0, 0))),
    ))
    store = WeightStore()
    store.set_tensor("c", "kernel", np.ones((1, 1, 1, 1, 1), np.float32))
    store.set_tensor("c", "bias", np.full(1, 0.75, np.float32))
    return spec, store


def _all_ops_net(rng):
    """One network touching every supported layer kind."""
    def conv(name, bottom, top, fo, fi, k=3, pad=0, stride=1):
        layers.append(LayerSpec(name, LayerKind.CONVOLUTION, (bottom,), (top,),
                                dict(num_output=fo, kernel=(k,) * 3,
                                     stride=(stride,) * 3, pad=(pad,) * 3)))
        store.set_tensor(name, "kernel",
                         (rng.standard_normal((fo, fi, k, k, k)) * 0.2)
                         .astype(np.float32))
        store.set_tensor(name, "bias", rng.standard_normal(fo).astype(np.float32))

    store = WeightStore()
    layers = [LayerSpec("in", LayerKind.INPUT, (), ("data",),
                        dict(shape=(1, 3, 12, 12, 12)))]
    conv("c1", "data", "t1", 6, 3, pad=1)
    layers.append(LayerSpec("r1", LayerKind.RELU, ("t1",), ("t2",), {}))
    layers.append(LayerSpec("p1", LayerKind.POOLING, ("t2",), ("t3",),
                            dict(mode="max", window=(2, 2, 2), stride=(2, 2, 2))))
    conv("c2", "t3", "t4", 8, 6)
    layers.append(LayerSpec("d1", LayerKind.DECONVOLUTION, ("t4",), ("t5",),
                            dict(num_output=4, kernel=(2, 2, 2),
                                 stride=(2, 2, 2), pad=(0, 0, 0))))
    store.set_tensor("d1", "kernel",
                     (rng.standard_normal((4, 8, 2, 2, 2)) * 0.2).astype(np.float32))
    store.set_tensor("d1", "bias", rng.standard_normal(4).astype(np.float32))
    layers.append(LayerSpec("b1", LayerKind.BATCH_NORM, ("t5",), ("t6",), {}))
    store.set_tensor("b1", "bn_mean", rng.standard_normal(4).astype(np.float32))
    store.set_tensor("b1", "bn_var",
                     rng.uniform(0.5, 2.0, 4).astype(np.float32))
    store.set_tensor("b1", "bn_eps", np.float32(1e-5))
    layers.append(LayerSpec("s1", LayerKind.SCALE, ("t6",), ("t7",), {}))
    store.set_tensor("s1", "scale_gamma",
                     rng.uniform(0.5, 1.5, 4).astype(np.float32))
    store.set_tensor("s1", "scale_beta", rng.standard_normal(4).astype(np.float32))
    layers.append(LayerSpec("e1", LayerKind.ELU, ("t7",), ("t8",),
                            dict(alpha=0.8)))
    layers.append(LayerSpec("m1", LayerKind.MERGE_CROP, ("t8", "t2"), ("t9",), {}))
    layers.append(LayerSpec("g1", LayerKind.SIGMOID, ("t9",), ("t10",), {}))
    layers.append(LayerSpec("w1", LayerKind.ELTWISE, ("t10", "t10"), ("out",),
                            dict(op="mul")))
    return NetworkSpec("allops", tuple(layers)), store


def test_identity_network_adds_bias(rng):
    spec, store = _identity_net()
    plan, _ = compile_network(spec, store)
    x = rng.standard_normal((1, 1, 5, 5, 5)).astype(np.float32)
    out = PlanRunner(plan).run(x)
    np.testing.assert_array_equal(out["out"], x + 0.75)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("simd", [2, 4, 8])
def test_all_ops_network_matches_oracle(backend, simd, rng):
    spec, store = _all_ops_net(rng)
    x = rng.standard_normal((1, 3, 12, 12, 12)).astype(np.float32)
    expected = ref_run(spec, store, {"data": x})
    for toggles in ({}, dict(fuse_add=False, fold_lin=False,
                             fuse_act=False, elide_pad=False)):
        plan, _ = compile_network(spec, store, simd=simd, **toggles)
        got = PlanRunner(plan, backend=backend).run(x)
        assert got.keys() == expected.keys()
        np.testing.assert_allclose(got["out"], expected["out"],
                                   atol=1e-4, rtol=0)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("variant,levels,size", [
    ("original", 2, 36),
    ("symmetric", 3, 16),
    ("residual", 3, 16),
])
def test_zoo_networks_match_oracle(backend, variant, levels, size, rng):
    spec, store = generate_zoo(ZooConfig(variant, levels=levels,
                                         input_spatial=(size,) * 3))
    shape = (1, spec.layers[0].params["shape"][1], size, size, size)
    x = rng.standard_normal(shape).astype(np.float32)
    expected = ref_run(spec, store, {"data": x})
    plan, _ = compile_network(spec, store)
    got = PlanRunner(plan, backend=backend).run(x)
    for name in expected:
        np.testing.assert_allclose(got[name], expected[name],
                                   atol=1e-4, rtol=0)


def test_repeated_runs_bit_identical(rng):
    spec, store = generate_zoo(ZooConfig("residual", levels=3,
                                         input_spatial=(16, 16, 16)))
    plan, _ = compile_network(spec, store)
    runner = PlanRunner(plan)
    x = rng.standard_normal((1, 1, 16, 16, 16)).astype(np.float32)
    first = runner.run(x)
    second = runner.run(x)
    for name in first:
        assert np.array_equal(first[name], second[name])


def test_execute_convenience_matches_runner(rng):
    spec, store = _identity_net()
    plan, _ = compile_network(spec, store)
    x = rng.standard_normal((1, 1, 5, 5, 5)).astype(np.float32)
    assert np.array_equal(execute(plan, x)["out"],
                          PlanRunner(plan).run(x)["out"])


def _two_input_plan(rng):
    spec = NetworkSpec("pair", (
        LayerSpec("ia", LayerKind.INPUT, (), ("a",),
                  dict(shape=(1, 2, 4, 4, 4))),
        LayerSpec("ib", LayerKind.INPUT, (), ("b",),
                  dict(shape=(1, 2, 4, 4, 4))),
        LayerSpec("add", LayerKind.ELTWISE, ("a", "b"), ("out",),
                  dict(op="add")),
    ))
    plan, _ = compile_network(spec, WeightStore())
    return plan


def test_bare_array_rejected_for_multi_input_plan(rng):
    plan = _two_input_plan(rng)
    x = np.zeros((1, 2, 4, 4, 4), np.float32)
    with pytest.raises(ExecutionError, match="2 inputs"):
        PlanRunner(plan).run(x)
    out = PlanRunner(plan).run({"a": x, "b": x})
    assert out["out"].shape == (1, 2, 4, 4, 4)


def test_missing_input_rejected(rng):
    plan = _two_input_plan(rng)
    x = np.zeros((1, 2, 4, 4, 4), np.float32)
    with pytest.raises(ExecutionError, match="missing value for input"):
        PlanRunner(plan).run({"a": x})


def test_wrong_shape_rejected(rng):
    spec, store = _identity_net()
    plan, _ = compile_network(spec, store)
    with pytest.raises(ExecutionError, match="plan wants"):
        PlanRunner(plan).run(np.zeros((1, 1, 4, 5, 5), np.float32))
