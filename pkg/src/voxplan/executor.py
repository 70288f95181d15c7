"""Plan execution over a preallocated arena.

A ``PlanRunner`` binds a plan to real memory once: buffers are allocated
and zeroed (so halos start clean and stay clean), kernels are blocked,
per-channel coefficient vectors are padded to whole lanes, and every step
is resolved to views plus a bound callable.  ``run`` then just loops over
the callables, so repeated inference does no allocation or lookup work
beyond blocking the inputs and unblocking the outputs.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .backend import Backend, get_backend
from .blocked import (
    ELEMENT_DTYPE,
    fmap_blocks,
    kernel_to_blocked,
    to_blocked,
)
from .errors import ExecutionError
from .formats import (
    ROLE_BIAS,
    ROLE_BN_MEAN,
    ROLE_BN_VAR,
    ROLE_KERNEL,
    ROLE_SCALE_BETA,
    ROLE_SCALE_GAMMA,
)
from .kernels_py import ConvInvocation
from .netspec import DEFAULT_ELU_ALPHA, LayerKind
from .plan import ExecutionPlan, Step


def _pad_lanes(vec: np.ndarray, blocks: int, simd: int) -> np.ndarray:
    """Pad a per-fmap vector to whole lanes; the tail is zero."""
    out = np.zeros(blocks * simd, dtype=ELEMENT_DTYPE)
    out[:vec.shape[0]] = vec.astype(ELEMENT_DTYPE, copy=False)
    return out


def _bn_coefficients(mean: np.ndarray, var: np.ndarray, eps: float):
    factor = 1.0 / np.sqrt(var.astype(np.float64) + eps)
    mult = factor
    add = -mean.astype(np.float64) * factor
    return mult.astype(ELEMENT_DTYPE), add.astype(ELEMENT_DTYPE)


class PlanRunner:
    """Executes one plan; reusable across calls, deterministic output."""

    def __init__(self, plan: ExecutionPlan, backend: str | Backend | None = None):
        self.plan = plan
        if isinstance(backend, Backend):
            self.backend = backend
        else:
            self.backend = get_backend(backend)
        self.simd = plan.simd
        self._buffers = [
            np.zeros(spec.elements, dtype=ELEMENT_DTYPE) for spec in plan.buffers
        ]
        self._input_views = {
            name: self._dense_view(buf, dims) for name, buf, dims in plan.inputs
        }
        self._input_dims = {name: dims for name, _, dims in plan.inputs}
        self._calls = [self._bind_step(step) for step in plan.steps]

    # -- view construction ---------------------------------------------------

    def _dense_view(self, buffer_id: int, dims) -> np.ndarray:
        n, f, x, y, z = dims
        fb = fmap_blocks(f, self.simd)
        need = n * fb * x * y * z * self.simd
        return self._buffers[buffer_id][:need].reshape(n, fb, x, y, z, self.simd)

    def _output_view(self, out) -> np.ndarray:
        """Interior view of the step output; identical to the dense view
        when the output carries no halo."""
        n, f, x, y, z = out.dims
        px, py, pz = out.pads
        full = self._dense_view(
            out.buffer, (n, f, x + 2 * px, y + 2 * py, z + 2 * pz))
        return full[:, :, px:px + x, py:py + y, pz:pz + z, :]

    # -- step binding --------------------------------------------------------

    def _bind_step(self, step: Step):
        kind = step.kind
        if kind in (LayerKind.CONVOLUTION, LayerKind.DECONVOLUTION):
            return self._bind_conv(step)
        in_views = [self._dense_view(i.buffer, i.dims) for i in step.inputs]
        out_view = self._output_view(step.output)
        fmaps = step.output.dims[1]
        if kind is LayerKind.BATCH_NORM:
            w = self.plan.weights
            mult, add = _bn_coefficients(
                w.tensor(step.name, ROLE_BN_MEAN),
                w.tensor(step.name, ROLE_BN_VAR),
                w.bn_eps(step.name))
            blocks = out_view.shape[1]
            mult = _pad_lanes(mult, blocks, self.simd)
            add = _pad_lanes(add, blocks, self.simd)
            return lambda: ops.linear_transform(in_views[0], out_view, mult, add, fmaps)
        if kind is LayerKind.SCALE:
            w = self.plan.weights
            blocks = out_view.shape[1]
            mult = _pad_lanes(w.tensor(step.name, ROLE_SCALE_GAMMA), blocks, self.simd)
            add = _pad_lanes(w.tensor(step.name, ROLE_SCALE_BETA), blocks, self.simd)
            return lambda: ops.linear_transform(in_views[0], out_view, mult, add, fmaps)
        if kind in (LayerKind.RELU, LayerKind.ELU, LayerKind.SIGMOID):
            act = kind.value.lower()
            alpha = float(step.params.get("alpha", DEFAULT_ELU_ALPHA))
            return lambda: ops.activation(in_views[0], out_view, act, alpha, fmaps)
        if kind is LayerKind.POOLING:
            window = step.params["window"]
            stride = step.params["stride"]
            mode = step.params["mode"]
            return lambda: ops.pool(in_views[0], out_view, window, stride, mode)
        if kind is LayerKind.ELTWISE:
            op = step.params["op"]
            return lambda: ops.eltwise(in_views[0], in_views[1], op, out_view, fmaps)
        if kind is LayerKind.MERGE_CROP:
            a_fmaps = step.inputs[0].dims[1]
            b_fmaps = step.inputs[1].dims[1]
            return lambda: ops.mergecrop(
                in_views[0], a_fmaps, in_views[1], b_fmaps, out_view, self.simd)
        if kind is LayerKind.PAD:
            pads = step.params["pads"]
            return lambda: ops.pad_copy(in_views[0], out_view, pads)
        raise ExecutionError("plan step %r has unrunnable kind %s" % (step.name, kind))

    def _bind_conv(self, step: Step):
        w = self.plan.weights
        kernel = kernel_to_blocked(w.tensor(step.name, ROLE_KERNEL), self.simd)
        out_view = self._output_view(step.output)
        blocks = out_view.shape[1]
        bias = _pad_lanes(w.tensor(step.name, ROLE_BIAS), blocks, self.simd)
        base_view = None
        scale_vec = None
        if step.additive:
            base_view = self._dense_view(step.base.buffer, step.base.dims)
            if step.base_scale is not None:
                scale_vec = _pad_lanes(
                    np.asarray(step.base_scale, dtype=ELEMENT_DTYPE),
                    blocks, self.simd)
        inv = ConvInvocation(
            in_view=self._dense_view(step.inputs[0].buffer, step.inputs[0].dims),
            in_fmaps=step.inputs[0].dims[1],
            kernel=kernel,
            bias=bias,
            out_view=out_view,
            out_fmaps=step.output.dims[1],
            stride=tuple(step.params["stride"]),
            additive=step.additive,
            base_view=base_view,
            base_scale=scale_vec,
            fused_act=step.fused_act,
            patch_extent=self.plan.patch_extent,
        )
        if step.kind is LayerKind.CONVOLUTION:
            return lambda: self.backend.conv3d(inv)
        return lambda: self.backend.deconv3d(inv)

    # -- running -------------------------------------------------------------

    def run(self, inputs) -> dict[str, np.ndarray]:
        """Run the plan over blocked copies of ``inputs``.

        ``inputs`` is a mapping of input name to a standard (batch, fmap,
        x, y, z) array, or a bare array when the plan has one input.
        Returns a dict of output name to standard array.
        """
        if not isinstance(inputs, dict):
            if len(self.plan.inputs) != 1:
                raise ExecutionError(
                    "plan has %d inputs, pass a dict" % len(self.plan.inputs))
            inputs = {self.plan.inputs[0][0]: inputs}
        for name, view in self._input_views.items():
            if name not in inputs:
                raise ExecutionError("missing value for input %r" % name)
            arr = np.asarray(inputs[name])
            want = self._input_dims[name]
            if tuple(arr.shape) != tuple(want):
                raise ExecutionError(
                    "input %r has shape %s, plan wants %s"
                    % (name, tuple(arr.shape), tuple(want)))
            view[...] = to_blocked(arr, self.simd).view
        for call in self._calls:
            call()
        results = {}
        for name, buffer_id, dims in self.plan.outputs:
            view = self._dense_view(buffer_id, dims)
            n, f, x, y, z = dims
            std = view.transpose(0, 1, 5, 2, 3, 4).reshape(n, -1, x, y, z)
            results[name] = np.ascontiguousarray(std[:, :f])
        return results


def execute(plan: ExecutionPlan, inputs, backend: str | None = None) -> dict[str, np.ndarray]:
    """One-shot convenience: build a runner, run once."""
    return PlanRunner(plan, backend=backend).run(inputs)
