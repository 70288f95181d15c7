"""Pure numpy convolution kernels over the blocked layout.

The unit of work is the sub-image: the contribution of one input fmap
block to a patch of one output fmap block.  The first application of a
patch initializes the accumulator from the bias (plus the scaled base
tensor for an additive convolution); the final application applies the
fused activation while storing.  Accumulation order is fixed: input
blocks ascending, kernel offsets with z fastest, lanes ascending, which
keeps results bit-identical run to run and independent of whether the
output is stored densely or as the interior of a halo buffer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocked import BlockedKernel
from .netspec import DEFAULT_ELU_ALPHA
from .ops import apply_activation, zero_tail


@dataclass
class ConvInvocation:
    """Everything one convolution or deconvolution step needs.

    Views are rank-6 blocked views; ``bias`` and ``base_scale`` are padded
    to ``out_blocks * simd`` lanes with zero tails.  ``base_view`` is the
    tensor added during initialization when ``additive`` is set.
    """

    in_view: np.ndarray
    in_fmaps: int
    kernel: BlockedKernel
    bias: np.ndarray
    out_view: np.ndarray
    out_fmaps: int
    stride: tuple[int, int, int] = (1, 1, 1)
    additive: bool = False
    base_view: np.ndarray | None = None
    base_scale: np.ndarray | None = None
    fused_act: tuple[str, float] | None = None
    patch_extent: tuple[int, int, int] | None = None


@dataclass(frozen=True)
class SubImageTask:
    """One sub-image application: input block -> patch of an output block."""

    in_block: int
    out_block: int
    origin: tuple[int, int, int]
    extent: tuple[int, int, int]
    first: bool
    last: bool


def _patch_origins(total: int, extent: int):
    for start in range(0, total, extent):
        yield start, min(extent, total - start)


def _init_patch(inv: ConvInvocation, batch: int, ob: int, origin, extent) -> np.ndarray:
    px, py, pz = extent
    simd = inv.kernel.simd
    acc = np.empty((px, py, pz, simd), dtype=np.float32)
    acc[...] = inv.bias[ob * simd:(ob + 1) * simd]
    if inv.additive:
        ox, oy, oz = origin
        base = inv.base_view[batch, ob, ox:ox + px, oy:oy + py, oz:oz + pz, :]
        if inv.base_scale is not None:
            acc += inv.base_scale[ob * simd:(ob + 1) * simd] * base
        else:
            acc += base
    return acc


def _accumulate_block(acc: np.ndarray, inv: ConvInvocation, batch: int,
                      ib: int, ob: int, origin, extent) -> None:
    """Add one input block's contribution to an output patch accumulator."""
    kview = inv.kernel.view
    kx, ky, kz = inv.kernel.kdims
    sx, sy, sz = inv.stride
    ox, oy, oz = origin
    px, py, pz = extent
    in_block = inv.in_view[batch, ib]
    simd = inv.kernel.simd
    flat = acc.reshape(-1, simd)
    for dx in range(kx):
        x0 = ox * sx + dx
        for dy in range(ky):
            y0 = oy * sy + dy
            for dz in range(kz):
                z0 = oz * sz + dz
                window = in_block[
                    x0:x0 + sx * (px - 1) + 1:sx,
                    y0:y0 + sy * (py - 1) + 1:sy,
                    z0:z0 + sz * (pz - 1) + 1:sz,
                    :,
                ]
                # (px*py*pz, s_in) @ (s_in, s_out), lanes summed ascending
                lanes = kview[ob, ib, dx, dy, dz]
                flat += window.reshape(-1, simd) @ lanes.T


def _finish_patch(inv: ConvInvocation, acc: np.ndarray, batch: int, ob: int,
                  origin, extent) -> None:
    if inv.fused_act is not None:
        kind, alpha = inv.fused_act
        acc = apply_activation(acc, kind, alpha)
    ox, oy, oz = origin
    px, py, pz = extent
    inv.out_view[batch, ob, ox:ox + px, oy:oy + py, oz:oz + pz, :] = acc


def subimage(task: SubImageTask, inv: ConvInvocation) -> None:
    """Run one sub-image application through memory.

    A non-first application reads the patch back from the output view; a
    non-last one stores the raw accumulator.  Chaining applications over
    all input blocks is bit-identical to ``conv3d`` because float32 values
    survive a store/reload exactly.
    """
    batch_count = inv.out_view.shape[0]
    for batch in range(batch_count):
        ox, oy, oz = task.origin
        px, py, pz = task.extent
        if task.first:
            acc = _init_patch(inv, batch, task.out_block, task.origin, task.extent)
        else:
            acc = inv.out_view[
                batch, task.out_block, ox:ox + px, oy:oy + py, oz:oz + pz, :
            ].copy()
        _accumulate_block(acc, inv, batch, task.in_block, task.out_block,
                          task.origin, task.extent)
        if task.last:
            _finish_patch(inv, acc, batch, task.out_block, task.origin, task.extent)
        else:
            inv.out_view[batch, task.out_block, ox:ox + px, oy:oy + py, oz:oz + pz, :] = acc


def conv3d(inv: ConvInvocation) -> None:
    """Blocked convolution: patches outer, input blocks inner, in-cache accumulator."""
    batches, out_blocks = inv.out_view.shape[0], inv.out_view.shape[1]
    out_spatial = inv.out_view.shape[2:5]
    in_blocks = inv.kernel.in_blocks
    ext = inv.patch_extent or out_spatial
    for batch in range(batches):
        for ob in range(out_blocks):
            for x0, px in _patch_origins(out_spatial[0], ext[0]):
                for y0, py in _patch_origins(out_spatial[1], ext[1]):
                    for z0, pz in _patch_origins(out_spatial[2], ext[2]):
                        origin, extent = (x0, y0, z0), (px, py, pz)
                        acc = _init_patch(inv, batch, ob, origin, extent)
                        for ib in range(in_blocks):
                            _accumulate_block(acc, inv, batch, ib, ob, origin, extent)
                        _finish_patch(inv, acc, batch, ob, origin, extent)
    zero_tail(inv.out_view, inv.out_fmaps)


def deconv3d(inv: ConvInvocation) -> None:
    """Blocked transposed convolution by kernel-offset scatter.

    Output is seeded with the bias, then every kernel offset scatters a
    strided slab; input blocks ascend and z moves fastest, matching the
    convolution discipline.  Fused activations apply at the end.
    """
    batches, out_blocks = inv.out_view.shape[0], inv.out_view.shape[1]
    in_spatial = inv.in_view.shape[2:5]
    kview = inv.kernel.view
    kx, ky, kz = inv.kernel.kdims
    sx, sy, sz = inv.stride
    ix, iy, iz = in_spatial
    simd = inv.kernel.simd
    for batch in range(batches):
        for ob in range(out_blocks):
            out_block = inv.out_view[batch, ob]
            out_block[...] = inv.bias[ob * simd:(ob + 1) * simd]
            for ib in range(inv.kernel.in_blocks):
                in_block = inv.in_view[batch, ib].reshape(-1, simd)
                for dx in range(kx):
                    for dy in range(ky):
                        for dz in range(kz):
                            lanes = kview[ob, ib, dx, dy, dz]
                            contrib = (in_block @ lanes.T).reshape(ix, iy, iz, simd)
                            out_block[
                                dx:dx + sx * (ix - 1) + 1:sx,
                                dy:dy + sy * (iy - 1) + 1:sy,
                                dz:dz + sz * (iz - 1) + 1:sz,
                                :,
                            ] += contrib
            if inv.fused_act is not None:
                kind, alpha = inv.fused_act
                out_block[...] = apply_activation(out_block, kind, alpha)
    zero_tail(inv.out_view, inv.out_fmaps)
