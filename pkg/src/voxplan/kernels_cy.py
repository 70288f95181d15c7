"""Adapter from invocation objects to the compiled extension.

The extension wants C-contiguous inputs and a lane-transposed kernel
(out_block, in_block, kx, ky, kz, in_lane, out_lane); the transposed copy
is cached on the invocation so repeated runs pay for it once.  The
transposed deconvolution stays on the numpy path: its scatter is BLAS
matrix products already and takes a small share of any network's time.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .kernels_py import ConvInvocation, SubImageTask
from .kernels_py import deconv3d as _py_deconv3d
from .ops import zero_tail

_ACT_CODE = {"relu": 1, "elu": 2, "sigmoid": 3}


def _lane_kernel(inv: ConvInvocation) -> np.ndarray:
    cached = getattr(inv, "_lane_kernel", None)
    if cached is None:
        cached = np.ascontiguousarray(inv.kernel.view.transpose(0, 1, 2, 3, 4, 6, 5))
        inv._lane_kernel = cached
    return cached


def _unpack(inv: ConvInvocation):
    in_view = inv.in_view
    if not in_view.flags["C_CONTIGUOUS"]:
        in_view = np.ascontiguousarray(in_view)
    if inv.additive:
        base = inv.base_view
        if not base.flags["C_CONTIGUOUS"]:
            base = np.ascontiguousarray(base)
        has_scale = inv.base_scale is not None
        scale = inv.base_scale if has_scale else inv.bias
    else:
        base, has_scale, scale = in_view, False, inv.bias
    if inv.fused_act is None:
        code, alpha = 0, 0.0
    else:
        code, alpha = _ACT_CODE[inv.fused_act[0]], float(inv.fused_act[1])
    return in_view, base, has_scale, scale, code, alpha


def conv3d(inv: ConvInvocation) -> None:
    in_view, base, has_scale, scale, code, alpha = _unpack(inv)
    tpx, tpy, tpz = inv.patch_extent or inv.out_view.shape[2:5]
    sx, sy, sz = inv.stride
    _kernels.conv3d(
        in_view, _lane_kernel(inv), inv.bias, inv.out_view, base, scale,
        inv.additive, has_scale, sx, sy, sz, int(tpx), int(tpy), int(tpz),
        code, alpha)
    zero_tail(inv.out_view, inv.out_fmaps)


def subimage(task: SubImageTask, inv: ConvInvocation) -> None:
    in_view, base, has_scale, scale, code, alpha = _unpack(inv)
    sx, sy, sz = inv.stride
    _kernels.subimage(
        in_view, _lane_kernel(inv), inv.bias, inv.out_view, base, scale,
        inv.additive, has_scale, sx, sy, sz,
        int(task.in_block), int(task.out_block),
        int(task.origin[0]), int(task.origin[1]), int(task.origin[2]),
        int(task.extent[0]), int(task.extent[1]), int(task.extent[2]),
        task.first, task.last, code, alpha)


def deconv3d(inv: ConvInvocation) -> None:
    _py_deconv3d(inv)
