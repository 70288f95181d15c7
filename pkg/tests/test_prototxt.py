"""Network description text: parsing, printing, wiring validation."""

import logging

import pytest

from voxplan.errors import (
    CycleError,
    DanglingReferenceError,
    DuplicateTopError,
    ModelError,
    ParseError,
    UnknownLayerError,
)
from voxplan.netspec import LayerKind, LayerSpec, NetworkSpec
from voxplan.prototxt import parse_network, print_network

MINIMAL = """
name: "tiny"
layer {
  name: "data"
  type: "Input"
  top: "data"
  input_param { shape { dim: 1 dim: 1 dim: 8 dim: 8 dim: 8 } }
}
layer {
  name: "conv1"
  type: "Convolution"
  bottom: "data"
  top: "conv1"
  convolution_param { num_output: 4 kernel_size: 3 stride: 1 pad: 0 }
}
"""


def test_parse_minimal():
    spec = parse_network(MINIMAL)
    assert spec.name == "tiny"
    assert [l.name for l in spec.layers] == ["data", "conv1"]
    conv = spec.layer("conv1")
    assert conv.kind is LayerKind.CONVOLUTION
    assert conv.params == {
        "num_output": 4, "kernel": (3, 3, 3), "stride": (1, 1, 1), "pad": (0, 0, 0)
    }
    assert spec.layer("data").params["shape"] == (1, 1, 8, 8, 8)


def test_parse_repeated_dims_and_comments():
    text = """
# a comment
name: "n"
layer {
  name: "data" type: "Input" top: "data"
  input_param { shape { dim: 2 dim: 3 dim: 4 dim: 5 dim: 6 } }
}
layer {
  name: "c" type: "Convolution" bottom: "data" top: "c"
  convolution_param {
    num_output: 2
    kernel_size: 1 kernel_size: 2 kernel_size: 3  # anisotropic
    stride: 2
    pad: 1 pad: 0 pad: 1
  }
}
"""
    spec = parse_network(text)
    c = spec.layer("c")
    assert c.params["kernel"] == (1, 2, 3)
    assert c.params["stride"] == (2, 2, 2)
    assert c.params["pad"] == (1, 0, 1)


def test_parse_all_layer_kinds():
    text = """
name: "kinds"
layer { name: "data" type: "Input" top: "data"
  input_param { shape { dim: 1 dim: 2 dim: 8 dim: 8 dim: 8 } } }
layer { name: "c" type: "Convolution" bottom: "data" top: "c"
  convolution_param { num_output: 4 kernel_size: 3 pad: 1 } }
layer { name: "bn" type: "BatchNorm" bottom: "c" top: "bn" }
layer { name: "sc" type: "Scale" bottom: "bn" top: "sc" }
layer { name: "act" type: "ELU" bottom: "sc" top: "act" elu_param { alpha: 0.5 } }
layer { name: "pool" type: "Pooling" bottom: "act" top: "pool"
  pooling_param { pool: MAX kernel_size: 2 stride: 2 } }
layer { name: "up" type: "Deconvolution" bottom: "pool" top: "up"
  convolution_param { num_output: 4 kernel_size: 2 stride: 2 } }
layer { name: "join" type: "Eltwise" bottom: "up" bottom: "act" top: "join"
  eltwise_param { operation: SUM } }
layer { name: "merge" type: "MergeCrop" bottom: "join" bottom: "act" top: "merge" }
layer { name: "r" type: "ReLU" bottom: "merge" top: "r" }
layer { name: "s" type: "Sigmoid" bottom: "r" top: "s" }
"""
    spec = parse_network(text)
    assert len(spec.layers) == 11
    assert spec.layer("act").params["alpha"] == 0.5
    assert spec.layer("pool").params == {"mode": "max", "window": (2, 2, 2), "stride": (2, 2, 2)}
    assert spec.layer("join").params["op"] == "add"
    assert spec.output_blobs() == ["s"]


def test_roundtrip_identity():
    spec = parse_network(MINIMAL)
    text = print_network(spec)
    again = parse_network(text)
    assert again == spec
    assert print_network(again) == text


def test_unknown_layer_type():
    text = MINIMAL + """
layer { name: "x" type: "Dropout" bottom: "conv1" top: "x" }
"""
    with pytest.raises(UnknownLayerError, match="Dropout"):
        parse_network(text)


def test_unknown_field_warns(caplog):
    text = MINIMAL.replace(
        "num_output: 4", "num_output: 4\n    dilation: 2"
    )
    with caplog.at_level(logging.WARNING):
        spec = parse_network(text)
    assert spec.layer("conv1").params["num_output"] == 4
    assert any("dilation" in r.message for r in caplog.records)


def test_dangling_bottom_names_blob():
    text = MINIMAL.replace('bottom: "data"', 'bottom: "ghost"')
    with pytest.raises(DanglingReferenceError, match="ghost"):
        parse_network(text)


def test_duplicate_top():
    text = MINIMAL + """
layer {
  name: "conv2"
  type: "Convolution"
  bottom: "data"
  top: "conv1"
  convolution_param { num_output: 4 kernel_size: 3 }
}
"""
    with pytest.raises(DuplicateTopError, match="conv1"):
        parse_network(text)


def test_cycle_detected():
    text = """
name: "loop"
layer { name: "data" type: "Input" top: "data"
  input_param { shape { dim: 1 dim: 1 dim: 4 dim: 4 dim: 4 } } }
layer { name: "a" type: "Eltwise" bottom: "data" bottom: "b" top: "a"
  eltwise_param { operation: SUM } }
layer { name: "b" type: "ReLU" bottom: "a" top: "b" }
"""
    with pytest.raises(CycleError):
        parse_network(text)


def test_syntax_error_carries_line():
    text = 'name: "x"\nlayer { name }\n'
    with pytest.raises(ParseError) as err:
        parse_network(text)
    assert err.value.line == 2


def test_unterminated_string():
    with pytest.raises(ParseError, match="unterminated"):
        parse_network('name: "oops\n')


def test_missing_required_param():
    text = MINIMAL.replace("num_output: 4 ", "")
    with pytest.raises(ParseError, match="num_output"):
        parse_network(text)


def test_two_tops_rejected():
    layers = (
        LayerSpec("data", LayerKind.INPUT, (), ("data",), {"shape": (1, 1, 4, 4, 4)}),
        LayerSpec("r", LayerKind.RELU, ("data",), ("a", "b"), {}),
    )
    with pytest.raises(ModelError, match="exactly one"):
        NetworkSpec("bad", layers).validate()


def test_eltwise_needs_two_bottoms():
    layers = (
        LayerSpec("data", LayerKind.INPUT, (), ("data",), {"shape": (1, 1, 4, 4, 4)}),
        LayerSpec("e", LayerKind.ELTWISE, ("data",), ("e",), {"op": "add"}),
    )
    with pytest.raises(ModelError, match="input blob"):
        NetworkSpec("bad", layers).validate()


def test_printer_escapes_strings():
    spec = NetworkSpec(
        'quo"te',
        (LayerSpec("data", LayerKind.INPUT, (), ("data",), {"shape": (1, 1, 4, 4, 4)}),),
    )
    text = print_network(spec)
    assert parse_network(text).name == 'quo"te'


def test_float_params_roundtrip():
    text = MINIMAL + """
layer { name: "e" type: "ELU" bottom: "conv1" top: "e" elu_param { alpha: 1e-05 } }
"""
    spec = parse_network(text)
    assert spec.layer("e").params["alpha"] == pytest.approx(1e-5)
    again = parse_network(print_network(spec))
    assert again == spec
