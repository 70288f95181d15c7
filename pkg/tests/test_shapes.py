"""Shape propagation and weight-dimension checking."""

import numpy as np
import pytest

from voxplan.errors import ShapeError
from voxplan.formats import WeightStore
from voxplan.netspec import LayerKind, LayerSpec, NetworkSpec
from voxplan.shapes import conv_extent, crop_offsets, deconv_extent, validate_shapes


def _input(name, shape):
    return LayerSpec(name, LayerKind.INPUT, (), (name,), {"shape": shape})


def _conv(name, bottom, fout, kernel=3, stride=1, pad=0):
    t = lambda v: (v,) * 3 if isinstance(v, int) else tuple(v)
    return LayerSpec(name, LayerKind.CONVOLUTION, (bottom,), (name,), {
        "num_output": fout, "kernel": t(kernel), "stride": t(stride), "pad": t(pad)})


def _deconv(name, bottom, fout, kernel=2, stride=2, pad=0):
    t = lambda v: (v,) * 3 if isinstance(v, int) else tuple(v)
    return LayerSpec(name, LayerKind.DECONVOLUTION, (bottom,), (name,), {
        "num_output": fout, "kernel": t(kernel), "stride": t(stride), "pad": t(pad)})


def test_extent_formulas():
    assert conv_extent(20, 3, 1, 0) == 18
    assert conv_extent(16, 3, 1, 1) == 16
    assert conv_extent(7, 2, 2, 0) == 3
    assert deconv_extent(9, 2, 2, 0) == 18
    assert deconv_extent(4, 3, 1, 1) == 4


def test_deconv_extent_matches_scatter_footprint():
    # widest voxel reached by scattering: (in-1)*stride + kernel
    for extent in (1, 2, 5):
        for stride in (1, 2, 3):
            for kernel in (1, 2, 4):
                touched = set()
                for x in range(extent):
                    for dx in range(kernel):
                        touched.add(x * stride + dx)
                assert deconv_extent(extent, kernel, stride, 0) == max(touched) + 1


def test_crop_offsets_floor():
    assert crop_offsets((20, 20, 20), (18, 18, 18)) == (1, 1, 1)
    assert crop_offsets((5, 5, 5), (2, 2, 2)) == (1, 1, 1)


def test_simple_chain():
    spec = NetworkSpec("n", (
        _input("data", (1, 1, 20, 20, 20)),
        _conv("c1", "data", 8),
        LayerSpec("p", LayerKind.POOLING, ("c1",), ("p",),
                  {"mode": "max", "window": (2, 2, 2), "stride": (2, 2, 2)}),
    ))
    shapes = validate_shapes(spec)
    assert shapes["c1"] == (1, 8, 18, 18, 18)
    assert shapes["p"] == (1, 8, 9, 9, 9)


def test_padded_conv_preserves_extent():
    spec = NetworkSpec("n", (
        _input("data", (1, 2, 16, 16, 16)),
        _conv("c1", "data", 4, pad=1),
    ))
    assert validate_shapes(spec)["c1"] == (1, 4, 16, 16, 16)


def test_deconv_shape():
    spec = NetworkSpec("n", (
        _input("data", (1, 4, 9, 9, 9)),
        _deconv("up", "data", 2),
    ))
    assert validate_shapes(spec)["up"] == (1, 2, 18, 18, 18)


def test_negative_extent_raises():
    spec = NetworkSpec("n", (
        _input("data", (1, 1, 2, 2, 2)),
        _conv("c1", "data", 4, kernel=3),
    ))
    with pytest.raises(ShapeError, match="extent"):
        validate_shapes(spec)


def test_pool_window_too_large():
    spec = NetworkSpec("n", (
        _input("data", (1, 1, 3, 3, 3)),
        LayerSpec("p", LayerKind.POOLING, ("data",), ("p",),
                  {"mode": "avg", "window": (4, 4, 4), "stride": (1, 1, 1)}),
    ))
    with pytest.raises(ShapeError, match="window"):
        validate_shapes(spec)


def test_eltwise_shape_mismatch():
    spec = NetworkSpec("n", (
        _input("a", (1, 2, 8, 8, 8)),
        _input("b", (1, 2, 8, 8, 6)),
        LayerSpec("e", LayerKind.ELTWISE, ("a", "b"), ("e",), {"op": "add"}),
    ))
    with pytest.raises(ShapeError, match="mismatched"):
        validate_shapes(spec)


def test_mergecrop_shapes():
    spec = NetworkSpec("n", (
        _input("a", (1, 3, 20, 20, 20)),
        _input("b", (1, 5, 18, 18, 18)),
        LayerSpec("m", LayerKind.MERGE_CROP, ("a", "b"), ("m",), {}),
    ))
    assert validate_shapes(spec)["m"] == (1, 8, 18, 18, 18)


def test_mergecrop_no_containment():
    spec = NetworkSpec("n", (
        _input("a", (1, 1, 20, 20, 16)),
        _input("b", (1, 1, 18, 18, 18)),
        LayerSpec("m", LayerKind.MERGE_CROP, ("a", "b"), ("m",), {}),
    ))
    with pytest.raises(ShapeError, match="contains"):
        validate_shapes(spec)


def test_weight_checking():
    spec = NetworkSpec("n", (
        _input("data", (1, 2, 8, 8, 8)),
        _conv("c1", "data", 4),
        LayerSpec("bn", LayerKind.BATCH_NORM, ("c1",), ("bn",), {}),
    ))
    store = WeightStore()
    store.set_tensor("c1", "kernel", np.zeros((4, 2, 3, 3, 3), dtype=np.float32))
    store.set_tensor("c1", "bias", np.zeros(4, dtype=np.float32))
    store.set_tensor("bn", "bn_mean", np.zeros(4, dtype=np.float32))
    store.set_tensor("bn", "bn_var", np.ones(4, dtype=np.float32))
    validate_shapes(spec, store)

    store.set_tensor("c1", "kernel", np.zeros((4, 3, 3, 3, 3), dtype=np.float32))
    with pytest.raises(ShapeError, match="c1.kernel"):
        validate_shapes(spec, store)


def test_missing_weight_entry():
    spec = NetworkSpec("n", (
        _input("data", (1, 1, 8, 8, 8)),
        _conv("c1", "data", 2),
    ))
    store = WeightStore()
    store.set_tensor("c1", "kernel", np.zeros((2, 1, 3, 3, 3), dtype=np.float32))
    with pytest.raises(ShapeError, match="c1.bias"):
        validate_shapes(spec, store)
