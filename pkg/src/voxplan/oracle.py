"""Naive reference implementations over standard (b, f, x, y, z) arrays.

Everything here favors directness over speed and never touches the blocked
layout, the optimizer, or the plan runner, so it can serve as the ground
truth those components are checked against.  Convolutions correlate (no
kernel flip); all math runs in float32 like the engine.
"""

from __future__ import annotations

import numpy as np

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
from .netspec import DEFAULT_ELU_ALPHA, LayerKind, NetworkSpec
from .shapes import crop_offsets


def _triple(v):
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    return tuple(int(x) for x in v)


def _f32(a):
    return np.asarray(a, dtype=np.float32)


def ref_conv3d(image, kernel, bias, stride=1, pad=0):
    """Strided cross-correlation plus per-fmap bias."""
    image, kernel, bias = _f32(image), _f32(kernel), _f32(bias)
    sx, sy, sz = _triple(stride)
    px, py, pz = _triple(pad)
    image = np.pad(image, ((0, 0), (0, 0), (px, px), (py, py), (pz, pz)))
    n, fi, ix, iy, iz = image.shape
    fo, fk, kx, ky, kz = kernel.shape
    if fk != fi:
        raise ShapeError("kernel expects %d input fmaps, image has %d" % (fk, fi))
    ox = (ix - kx) // sx + 1
    oy = (iy - ky) // sy + 1
    oz = (iz - kz) // sz + 1
    out = np.zeros((n, fo, ox, oy, oz), dtype=np.float32)
    out += bias.reshape(1, fo, 1, 1, 1)
    for dx in range(kx):
        for dy in range(ky):
            for dz in range(kz):
                window = image[
                    :, :,
                    dx:dx + sx * (ox - 1) + 1:sx,
                    dy:dy + sy * (oy - 1) + 1:sy,
                    dz:dz + sz * (oz - 1) + 1:sz,
                ]
                out += np.einsum(
                    "bfxyz,gf->bgxyz", window, kernel[:, :, dx, dy, dz], optimize=True
                )
    return out


def ref_deconv3d(image, kernel, bias, stride=1, pad=0):
    """Transposed convolution: scatter each input voxel through the kernel."""
    image, kernel, bias = _f32(image), _f32(kernel), _f32(bias)
    sx, sy, sz = _triple(stride)
    px, py, pz = _triple(pad)
    n, fi, ix, iy, iz = image.shape
    fo, fk, kx, ky, kz = kernel.shape
    if fk != fi:
        raise ShapeError("kernel expects %d input fmaps, image has %d" % (fk, fi))
    fx = (ix - 1) * sx + kx
    fy = (iy - 1) * sy + ky
    fz = (iz - 1) * sz + kz
    full = np.zeros((n, fo, fx, fy, fz), dtype=np.float32)
    for dx in range(kx):
        for dy in range(ky):
            for dz in range(kz):
                contrib = np.einsum(
                    "bfxyz,gf->bgxyz", image, kernel[:, :, dx, dy, dz], optimize=True
                )
                full[
                    :, :,
                    dx:dx + sx * (ix - 1) + 1:sx,
                    dy:dy + sy * (iy - 1) + 1:sy,
                    dz:dz + sz * (iz - 1) + 1:sz,
                ] += contrib
    out = full[:, :, px:fx - px, py:fy - py, pz:fz - pz]
    return out + bias.reshape(1, fo, 1, 1, 1)


def ref_pool3d(image, window, stride, mode="max"):
    image = _f32(image)
    kx, ky, kz = _triple(window)
    sx, sy, sz = _triple(stride)
    n, f, ix, iy, iz = image.shape
    ox = (ix - kx) // sx + 1
    oy = (iy - ky) // sy + 1
    oz = (iz - kz) // sz + 1
    acc = None
    for dx in range(kx):
        for dy in range(ky):
            for dz in range(kz):
                window_view = image[
                    :, :,
                    dx:dx + sx * (ox - 1) + 1:sx,
                    dy:dy + sy * (oy - 1) + 1:sy,
                    dz:dz + sz * (oz - 1) + 1:sz,
                ]
                if acc is None:
                    acc = window_view.copy()
                elif mode == "max":
                    np.maximum(acc, window_view, out=acc)
                else:
                    acc += window_view
    if mode == "avg":
        acc /= np.float32(kx * ky * kz)
    return acc


def ref_eltwise(a, b, op):
    a, b = _f32(a), _f32(b)
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    if op == "div":
        with np.errstate(divide="ignore", invalid="ignore"):
            return a / b
    raise ShapeError("unknown eltwise op %r" % op)


def ref_mergecrop(a, b):
    """Concatenate fmaps of two images cropped to their common extent, a first."""
    a, b = _f32(a), _f32(b)
    sa, sb = a.shape[2:], b.shape[2:]
    common = tuple(min(x, y) for x, y in zip(sa, sb))
    oa = crop_offsets(sa, common)
    ob = crop_offsets(sb, common)
    ca = a[:, :, oa[0]:oa[0] + common[0], oa[1]:oa[1] + common[1], oa[2]:oa[2] + common[2]]
    cb = b[:, :, ob[0]:ob[0] + common[0], ob[1]:ob[1] + common[1], ob[2]:ob[2] + common[2]]
    return np.concatenate([ca, cb], axis=1)


def ref_batch_norm(image, mean, var, eps):
    image = _f32(image)
    factor = (1.0 / np.sqrt(np.asarray(var, dtype=np.float64) + eps)).astype(np.float32)
    mean = _f32(mean)
    return (image - mean.reshape(1, -1, 1, 1, 1)) * factor.reshape(1, -1, 1, 1, 1)


def ref_scale(image, gamma, beta):
    image = _f32(image)
    gamma, beta = _f32(gamma), _f32(beta)
    return image * gamma.reshape(1, -1, 1, 1, 1) + beta.reshape(1, -1, 1, 1, 1)


def ref_activation(image, kind, alpha=DEFAULT_ELU_ALPHA):
    image = _f32(image)
    if kind == "relu":
        return np.maximum(image, np.float32(0))
    if kind == "elu":
        with np.errstate(over="ignore"):
            return np.where(
                image > 0, image, np.float32(alpha) * np.expm1(image, dtype=np.float32)
            )
    if kind == "sigmoid":
        with np.errstate(over="ignore"):
            return np.float32(1) / (np.float32(1) + np.exp(-image, dtype=np.float32))
    raise ShapeError("unknown activation %r" % kind)


_ACT_NAME = {
    LayerKind.RELU: "relu",
    LayerKind.ELU: "elu",
    LayerKind.SIGMOID: "sigmoid",
}


def ref_run(spec: NetworkSpec, store: WeightStore, inputs) -> dict[str, np.ndarray]:
    """Run a whole network naively; returns every output blob by name.

    ``inputs`` maps input blob names to arrays, or is a single array when
    the network has exactly one input layer.
    """
    input_layers = spec.input_layers()
    if isinstance(inputs, np.ndarray):
        if len(input_layers) != 1:
            raise ShapeError("network has %d inputs, pass a dict" % len(input_layers))
        inputs = {input_layers[0].tops[0]: inputs}
    blobs: dict[str, np.ndarray] = {}
    for idx in spec.topological_order():
        layer = spec.layers[idx]
        kind = layer.kind
        ins = [blobs[b] for b in layer.bottoms]
        if kind is LayerKind.INPUT:
            name = layer.tops[0]
            if name not in inputs:
                raise ShapeError("no array supplied for input %r" % name)
            arr = _f32(inputs[name])
            if tuple(arr.shape) != tuple(layer.params["shape"]):
                raise ShapeError(
                    "input %r has shape %s, network expects %s"
                    % (name, arr.shape, tuple(layer.params["shape"]))
                )
            out = arr
        elif kind is LayerKind.CONVOLUTION:
            out = ref_conv3d(
                ins[0],
                store.tensor(layer.name, ROLE_KERNEL),
                store.tensor(layer.name, ROLE_BIAS),
                layer.params["stride"],
                layer.params["pad"],
            )
        elif kind is LayerKind.DECONVOLUTION:
            out = ref_deconv3d(
                ins[0],
                store.tensor(layer.name, ROLE_KERNEL),
                store.tensor(layer.name, ROLE_BIAS),
                layer.params["stride"],
                layer.params["pad"],
            )
        elif kind is LayerKind.POOLING:
            out = ref_pool3d(ins[0], layer.params["window"], layer.params["stride"],
                             layer.params["mode"])
        elif kind is LayerKind.ELTWISE:
            out = ref_eltwise(ins[0], ins[1], layer.params["op"])
        elif kind is LayerKind.MERGE_CROP:
            out = ref_mergecrop(ins[0], ins[1])
        elif kind is LayerKind.BATCH_NORM:
            out = ref_batch_norm(
                ins[0],
                store.tensor(layer.name, ROLE_BN_MEAN),
                store.tensor(layer.name, ROLE_BN_VAR),
                store.bn_eps(layer.name),
            )
        elif kind is LayerKind.SCALE:
            out = ref_scale(
                ins[0],
                store.tensor(layer.name, ROLE_SCALE_GAMMA),
                store.tensor(layer.name, ROLE_SCALE_BETA),
            )
        elif kind in _ACT_NAME:
            out = ref_activation(ins[0], _ACT_NAME[kind], layer.params.get("alpha", DEFAULT_ELU_ALPHA))
        else:
            raise ShapeError("oracle cannot run layer kind %s" % kind)
        blobs[layer.tops[0]] = out
    return {name: blobs[name] for name in spec.output_blobs()}
