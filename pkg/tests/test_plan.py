"""Lowering to steps, arena reuse, and plan serialization."""

import numpy as np
import pytest

from voxplan.errors import PlanError
from voxplan.executor import PlanRunner
from voxplan.netspec import LayerKind, LayerSpec, NetworkSpec
from voxplan.plan import (
    DEFAULT_PATCH_EXTENT,
    compile_network,
    dump_plan,
    parse_plan,
    read_plan,
    write_plan,
)
from voxplan.formats import WeightStore
from voxplan.zoo import ZooConfig, generate_zoo


def _conv(name, bottom, top, fmaps, kernel=3):
    return LayerSpec(name, LayerKind.CONVOLUTION, (bottom,), (top,),
                     dict(num_output=fmaps, kernel=(kernel,) * 3,
                          stride=(1, 1, 1), pad=(0, 0, 0)))


def _fill_conv(store, rng, name, fo, fi, kernel=3):
    store.set_tensor(name, "kernel",
                     rng.standard_normal((fo, fi) + (kernel,) * 3)
                     .astype(np.float32) * 0.1)
    store.set_tensor(name, "bias", rng.standard_normal(fo).astype(np.float32))


def _chain_net(rng, spatial=10):
    spec = NetworkSpec("chain", (
        LayerSpec("in", LayerKind.INPUT, (), ("data",),
                  dict(shape=(1, 4, spatial, spatial, spatial))),
        _conv("c1", "data", "t1", 4),
        _conv("c2", "t1", "t2", 4),
        _conv("c3", "t2", "t3", 4),
    ))
    store = WeightStore()
    for name in ("c1", "c2", "c3"):
        _fill_conv(store, rng, name, 4, 4)
    return spec, store


def _blocked(dims, pads, simd):
    n, f, x, y, z = dims
    fb = -(-f // simd)
    px, py, pz = pads
    return n * fb * (x + 2 * px) * (y + 2 * py) * (z + 2 * pz) * simd


def _written_buffers(plan):
    return {s.output.buffer for s in plan.steps}


def check_plan_wellformed(plan):
    """Structural validity: ids, bounds, capacities, halo flags."""
    nbuf = len(plan.buffers)
    for idx, buf in enumerate(plan.buffers):
        assert buf.id == idx
        assert buf.elements > 0
    input_buffers = {b for _, b, _ in plan.inputs}
    written = set(input_buffers)
    for step in plan.steps:
        refs = [i.buffer for i in step.inputs]
        refs.append(step.output.buffer)
        if step.base is not None:
            refs.append(step.base.buffer)
        assert all(0 <= r < nbuf for r in refs)
        for inp in step.inputs:
            # consumers only ever read something already produced
            assert inp.buffer in written
            assert _blocked(inp.dims, (0, 0, 0), plan.simd) <= \
                plan.buffers[inp.buffer].elements
        out = step.output
        assert _blocked(out.dims, out.pads, plan.simd) <= \
            plan.buffers[out.buffer].elements
        if out.pads != (0, 0, 0):
            assert plan.buffers[out.buffer].haloed
        written.add(out.buffer)
    for _, bid, _ in plan.outputs:
        assert bid in written


def test_chain_ping_pongs_two_buffers(rng):
    spec, store = _chain_net(rng)
    plan, _ = compile_network(spec, store)
    # 4 tensors flow through the chain but successive lifetimes never
    # overlap, so two allocations suffice
    assert len(plan.buffers) == 2
    assert len(plan.steps) == 3
    check_plan_wellformed(plan)


def test_chain_arena_sized_by_two_largest_tensors(rng):
    spec, store = _chain_net(rng, spatial=10)
    plan, _ = compile_network(spec, store)
    expected = _blocked((1, 4, 10, 10, 10), (0, 0, 0), 8) + \
        _blocked((1, 4, 8, 8, 8), (0, 0, 0), 8)
    assert plan.arena_elements == expected
    assert plan.arena_bytes == expected * 4


def test_skip_operand_outlives_intermediate(rng):
    spec = NetworkSpec("skip", (
        LayerSpec("in", LayerKind.INPUT, (), ("data",),
                  dict(shape=(1, 4, 6, 6, 6))),
        _conv("c1", "data", "a", 4, kernel=1),
        _conv("c2", "a", "b", 4, kernel=1),
        LayerSpec("add", LayerKind.ELTWISE, ("b", "a"), ("s",), dict(op="add")),
    ))
    store = WeightStore()
    _fill_conv(store, rng, "c1", 4, 4, kernel=1)
    _fill_conv(store, rng, "c2", 4, 4, kernel=1)
    plan, _ = compile_network(spec, store, fuse_add=False)
    steps = {s.name: s for s in plan.steps}
    c1_buf = steps["c1"].output.buffer
    # nothing may overwrite c1's result before the addition reads it
    order = [s.name for s in plan.steps]
    between = order[order.index("c1") + 1:order.index("add")]
    assert all(steps[n].output.buffer != c1_buf for n in between)
    assert c1_buf in [i.buffer for i in steps["add"].inputs]
    check_plan_wellformed(plan)


@pytest.mark.parametrize("variant,levels", [
    ("original", 2), ("symmetric", 3), ("residual", 3),
])
def test_zoo_plans_wellformed(variant, levels):
    size = 40 if variant == "original" else 16
    spec, store = generate_zoo(ZooConfig(variant, levels=levels,
                                         input_spatial=(size,) * 3))
    plan, _ = compile_network(spec, store)
    check_plan_wellformed(plan)
    # reuse must beat one-buffer-per-step allocation
    assert len(plan.buffers) < len(plan.steps)


def test_fused_plan_base_reads_live_buffer():
    spec, store = generate_zoo(ZooConfig("residual", levels=3,
                                         input_spatial=(16, 16, 16)))
    plan, _ = compile_network(spec, store)
    written = {b for _, b, _ in plan.inputs}
    for step in plan.steps:
        if step.base is not None:
            assert step.base.buffer in written
        written.add(step.output.buffer)


def test_patch_extent_recorded_and_validated(rng):
    spec, store = _chain_net(rng)
    plan, _ = compile_network(spec, store)
    assert plan.patch_extent == DEFAULT_PATCH_EXTENT
    plan, _ = compile_network(spec, store, patch_extent=(2, 3, 4))
    assert plan.patch_extent == (2, 3, 4)
    with pytest.raises(PlanError):
        compile_network(spec, store, patch_extent=(0, 4, 8))


def test_compile_leaves_caller_store_untouched():
    spec, store = generate_zoo(ZooConfig("residual", levels=3,
                                         input_spatial=(16, 16, 16)))
    kernel_before = store.tensor("d0_conv1", "kernel").copy()
    compile_network(spec, store)
    assert np.array_equal(store.tensor("d0_conv1", "kernel"), kernel_before)
    assert store.has("d01_bn", "bn_mean")


def _plans_equal(a, b):
    assert a.name == b.name
    assert a.simd == b.simd
    assert a.patch_extent == b.patch_extent
    assert a.buffers == b.buffers
    assert a.inputs == b.inputs
    assert a.outputs == b.outputs
    assert a.steps == b.steps
    assert sorted(a.weights.names()) == sorted(b.weights.names())
    for name in a.weights.names():
        layer, role = name.rsplit(".", 1)
        assert np.array_equal(a.weights.tensor(layer, role),
                              b.weights.tensor(layer, role))


def test_serialization_roundtrip_in_memory():
    spec, store = generate_zoo(ZooConfig("residual", levels=3,
                                         input_spatial=(16, 16, 16)))
    plan, _ = compile_network(spec, store)
    again = parse_plan(dump_plan(plan))
    _plans_equal(plan, again)


def test_serialized_plan_runs_identically(tmp_path, rng):
    spec, store = generate_zoo(ZooConfig("symmetric", levels=3,
                                         input_spatial=(16, 16, 16)))
    plan, _ = compile_network(spec, store)
    path = tmp_path / "net.plan"
    write_plan(path, plan)
    again = read_plan(path)
    _plans_equal(plan, again)
    x = rng.standard_normal((1, 1, 16, 16, 16)).astype(np.float32)
    out_a = PlanRunner(plan).run(x)
    out_b = PlanRunner(again).run(x)
    assert out_a.keys() == out_b.keys()
    for name in out_a:
        assert np.array_equal(out_a[name], out_b[name])
