"""Shape propagation over a network description.

Shapes are (batch, fmap, x, y, z).  Convolution and pooling shrink by
floor((in + 2*pad - k) / stride) + 1, deconvolution grows by
(in - 1) * stride + k - 2*pad, MergeCrop concatenates fmaps and crops both
inputs to their common spatial extent.  When a weight store is supplied
every declared parameter tensor is checked against the shape it must have.
"""

from __future__ import annotations

from .errors import ShapeError
from .formats import (
    ROLE_BIAS,
    ROLE_BN_MEAN,
    ROLE_BN_VAR,
    ROLE_KERNEL,
    ROLE_SCALE_BETA,
    ROLE_SCALE_GAMMA,
    WeightStore,
)
from .netspec import LayerKind, LayerSpec, NetworkSpec

Shape = tuple[int, int, int, int, int]


def conv_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - kernel) // stride + 1


def deconv_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    return (extent - 1) * stride + kernel - 2 * pad


def crop_offsets(larger, smaller) -> tuple[int, int, int]:
    """Low-side crop offsets centering ``smaller`` in ``larger`` (floor on ties)."""
    return tuple((a - b) // 2 for a, b in zip(larger, smaller))


def _conv_like_shape(layer: LayerSpec, shape: Shape) -> Shape:
    n, f, *spatial = shape
    kernel = layer.params["kernel"]
    stride = layer.params["stride"]
    pad = layer.params["pad"]
    out = []
    for d, (e, k, s, p) in enumerate(zip(spatial, kernel, stride, pad)):
        if layer.kind is LayerKind.CONVOLUTION:
            oe = conv_extent(e, k, s, p)
        else:
            oe = deconv_extent(e, k, s, p)
        if oe < 1:
            raise ShapeError(
                "layer %r produces non-positive extent %d on axis %d "
                "(input %d, kernel %d, stride %d, pad %d)"
                % (layer.name, oe, d, e, k, s, p)
            )
        out.append(oe)
    return (n, layer.params["num_output"], *out)


def _pool_shape(layer: LayerSpec, shape: Shape) -> Shape:
    n, f, *spatial = shape
    window = layer.params["window"]
    stride = layer.params["stride"]
    out = []
    for d, (e, k, s) in enumerate(zip(spatial, window, stride)):
        if k > e:
            raise ShapeError(
                "layer %r pooling window %d exceeds extent %d on axis %d"
                % (layer.name, k, e, d)
            )
        out.append((e - k) // s + 1)
    return (n, f, *out)


def _check_entry(store: WeightStore, layer: str, role: str, want: tuple) -> None:
    name = "%s.%s" % (layer, role)
    if name not in store:
        raise ShapeError("weight store lacks entry %r" % name)
    got = store.get(name).shape
    if tuple(got) != tuple(want):
        raise ShapeError("entry %r has shape %s, expected %s" % (name, got, tuple(want)))


def validate_shapes(spec: NetworkSpec, store: WeightStore | None = None) -> dict[str, Shape]:
    """Propagate shapes through the graph; returns blob name to shape.

    Raises ShapeError on any inconsistency: a non-positive output extent,
    fmap counts that do not match a declared kernel, MergeCrop inputs
    where neither spatial extent contains the other, or weight entries
    whose dimensions disagree with the network description.
    """
    spec.validate()
    shapes: dict[str, Shape] = {}
    for idx in spec.topological_order():
        layer = spec.layers[idx]
        ins = [shapes[b] for b in layer.bottoms]
        kind = layer.kind
        if kind is LayerKind.INPUT:
            shape = tuple(layer.params["shape"])
            if any(d < 1 for d in shape):
                raise ShapeError("layer %r declares non-positive input dims %s" % (layer.name, shape))
            out = shape
        elif kind in (LayerKind.CONVOLUTION, LayerKind.DECONVOLUTION):
            out = _conv_like_shape(layer, ins[0])
            if store is not None:
                fo = layer.params["num_output"]
                fi = ins[0][1]
                _check_entry(store, layer.name, ROLE_KERNEL, (fo, fi, *layer.params["kernel"]))
                _check_entry(store, layer.name, ROLE_BIAS, (fo,))
        elif kind is LayerKind.POOLING:
            out = _pool_shape(layer, ins[0])
        elif kind is LayerKind.ELTWISE:
            if ins[0] != ins[1]:
                raise ShapeError(
                    "layer %r combines mismatched shapes %s and %s"
                    % (layer.name, ins[0], ins[1])
                )
            out = ins[0]
        elif kind is LayerKind.MERGE_CROP:
            (na, fa, *sa), (nb, fb, *sb) = ins
            if na != nb:
                raise ShapeError("layer %r merges different batch sizes" % layer.name)
            if all(x >= y for x, y in zip(sa, sb)):
                common = sb
            elif all(y >= x for x, y in zip(sa, sb)):
                common = sa
            else:
                raise ShapeError(
                    "layer %r inputs %s and %s: neither spatial extent contains the other"
                    % (layer.name, tuple(sa), tuple(sb))
                )
            out = (na, fa + fb, *common)
        elif kind in (LayerKind.BATCH_NORM, LayerKind.SCALE):
            out = ins[0]
            if store is not None:
                f = ins[0][1]
                if kind is LayerKind.BATCH_NORM:
                    _check_entry(store, layer.name, ROLE_BN_MEAN, (f,))
                    _check_entry(store, layer.name, ROLE_BN_VAR, (f,))
                else:
                    _check_entry(store, layer.name, ROLE_SCALE_GAMMA, (f,))
                    _check_entry(store, layer.name, ROLE_SCALE_BETA, (f,))
        else:
            out = ins[0]
        shapes[layer.tops[0]] = tuple(int(d) for d in out)
    return shapes


def network_io(spec: NetworkSpec, shapes: dict[str, Shape]):
    """(name, shape) pairs for network inputs and outputs."""
    inputs = [(l.tops[0], shapes[l.tops[0]]) for l in spec.input_layers()]
    outputs = [(b, shapes[b]) for b in spec.output_blobs()]
    return inputs, outputs
