"""Layout-level operations outside the convolution hot loop.

Everything here works on rank-6 blocked views (b, block, x, y, z, lane).
Ops that write lane-sliced output zero the tail lanes of the last block
explicitly, so reused buffers never leak stale values into lanes past the
logical fmap count.
"""

from __future__ import annotations

import numpy as np

from .errors import PlanError
from .netspec import DEFAULT_ELU_ALPHA
from .shapes import crop_offsets


def zero_tail(view: np.ndarray, fmaps: int) -> None:
    """Zero the lanes past ``fmaps`` in the last block of a rank-6 view."""
    simd = view.shape[5]
    tail = fmaps % simd
    if tail:
        view[:, -1, :, :, :, tail:] = 0


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0))


def elu(x: np.ndarray, alpha: float) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.where(x > 0, x, np.float32(alpha) * np.expm1(x, dtype=np.float32))


def sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.float32(1) / (np.float32(1) + np.exp(-x, dtype=np.float32))


def apply_activation(x: np.ndarray, kind: str, alpha: float = DEFAULT_ELU_ALPHA) -> np.ndarray:
    if kind == "relu":
        return relu(x)
    if kind == "elu":
        return elu(x, alpha)
    if kind == "sigmoid":
        return sigmoid(x)
    raise PlanError("unknown activation %r" % kind)


def eltwise(a: np.ndarray, b: np.ndarray, op: str, out: np.ndarray, fmaps: int) -> None:
    if op == "add":
        np.add(a, b, out=out)
    elif op == "mul":
        np.multiply(a, b, out=out)
    elif op == "div":
        with np.errstate(divide="ignore", invalid="ignore"):
            np.divide(a, b, out=out)
    else:
        raise PlanError("unknown eltwise op %r" % op)
    zero_tail(out, fmaps)


def pool(inp: np.ndarray, out: np.ndarray, window, stride, mode: str) -> None:
    kx, ky, kz = window
    sx, sy, sz = stride
    ox, oy, oz = out.shape[2:5]
    first = True
    for dx in range(kx):
        for dy in range(ky):
            for dz in range(kz):
                win = inp[
                    :, :,
                    dx:dx + sx * (ox - 1) + 1:sx,
                    dy:dy + sy * (oy - 1) + 1:sy,
                    dz:dz + sz * (oz - 1) + 1:sz,
                    :,
                ]
                if first:
                    out[...] = win
                    first = False
                elif mode == "max":
                    np.maximum(out, win, out=out)
                else:
                    out += win
    if mode == "avg":
        out /= np.float32(kx * ky * kz)


def linear_transform(inp: np.ndarray, out: np.ndarray, mult: np.ndarray,
                     add: np.ndarray, fmaps: int) -> None:
    """Per-fmap affine x*mult + add; coefficient tails are zero so lane tails stay zero."""
    blocks, simd = out.shape[1], out.shape[5]
    m = mult.reshape(1, blocks, 1, 1, 1, simd)
    a = add.reshape(1, blocks, 1, 1, 1, simd)
    np.multiply(inp, m, out=out)
    out += a
    zero_tail(out, fmaps)


def activation(inp: np.ndarray, out: np.ndarray, kind: str, alpha: float, fmaps: int) -> None:
    out[...] = apply_activation(inp, kind, alpha)
    zero_tail(out, fmaps)


def pad_copy(inp: np.ndarray, out: np.ndarray, pads) -> None:
    """Materialize a zero halo: full zero fill then interior copy."""
    px, py, pz = pads
    nx, ny, nz = inp.shape[2:5]
    out[...] = 0
    out[:, :, px:px + nx, py:py + ny, pz:pz + nz, :] = inp


def mergecrop(a: np.ndarray, a_fmaps: int, b: np.ndarray, b_fmaps: int,
              out: np.ndarray, simd: int) -> None:
    """Crop both inputs to their common extent, concatenate fmaps, a first.

    When a's fmap count is a multiple of the lane width both copies are
    whole-block; otherwise lanes are regathered one fmap at a time.
    """
    sa, sb = a.shape[2:5], b.shape[2:5]
    common = tuple(min(x, y) for x, y in zip(sa, sb))
    oa = crop_offsets(sa, common)
    ob = crop_offsets(sb, common)
    ca = a[:, :, oa[0]:oa[0] + common[0], oa[1]:oa[1] + common[1], oa[2]:oa[2] + common[2], :]
    cb = b[:, :, ob[0]:ob[0] + common[0], ob[1]:ob[1] + common[1], ob[2]:ob[2] + common[2], :]
    if a_fmaps % simd == 0:
        split = a_fmaps // simd
        out[:, :split] = ca
        out[:, split:] = cb
    else:
        for f in range(a_fmaps):
            out[:, f // simd, :, :, :, f % simd] = ca[:, f // simd, :, :, :, f % simd]
        for f in range(b_fmaps):
            g = a_fmaps + f
            out[:, g // simd, :, :, :, g % simd] = cb[:, f // simd, :, :, :, f % simd]
    zero_tail(out, a_fmaps + b_fmaps)
