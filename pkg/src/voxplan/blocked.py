"""SIMD-blocked tensor storage and the layout transforms around it.

Images are stored six-dimensionally as (batch, fmap-block, x, y, z, lane)
where a lane packs ``s`` consecutive feature maps, so fmap ``f`` lives in
block ``f // s`` at lane ``f % s``.  Kernels are stored seven-dimensionally
as (out-block, in-block, kx, ky, kz, out-lane, in-lane).  Addressing goes
through a descriptor of per-dimension strides counted in lane groups, which
is what lets a consumer read the interior of a larger allocation (a zero
halo) without any data movement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import LayoutError

ELEMENT_DTYPE = np.float32
ELEMENT_SIZE = 4

SUPPORTED_SIMD_WIDTHS = (1, 2, 4, 8, 16, 32)
DEFAULT_SIMD_WIDTH = 8


def validate_simd_width(simd: int) -> int:
    """Check a lane count against the widths this build supports."""
    if not isinstance(simd, (int, np.integer)):
        raise LayoutError("SIMD width must be an integer, got %r" % (simd,))
    simd = int(simd)
    if simd < 1 or simd & (simd - 1):
        raise LayoutError("SIMD width must be a positive power of two, got %d" % simd)
    if simd not in SUPPORTED_SIMD_WIDTHS:
        raise LayoutError(
            "SIMD width %d unsupported (supported: %s)"
            % (simd, ", ".join(str(w) for w in SUPPORTED_SIMD_WIDTHS))
        )
    return simd


def fmap_blocks(fmaps: int, simd: int) -> int:
    """Number of lane blocks needed for ``fmaps`` feature maps."""
    if fmaps < 1:
        raise LayoutError("fmap count must be positive, got %d" % fmaps)
    return -(-fmaps // simd)


def row_major_strides(dims) -> tuple[int, ...]:
    strides = [1] * len(dims)
    for i in range(len(dims) - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    return tuple(strides)


def padded_strides(dims, pads) -> tuple[tuple[int, ...], int]:
    """Strides and start offset of an interior view inside a padded allocation.

    ``dims`` are the interior extents, ``pads`` the symmetric halo width per
    dimension.  The returned strides are the row-major strides of the
    inflated allocation and the offset is the flat position of the first
    interior element, ``sum(pad[d] * stride[d])``.
    """
    if len(dims) != len(pads):
        raise LayoutError("dims and pads must have equal rank")
    if any(d < 1 for d in dims):
        raise LayoutError("dims must be positive, got %r" % (dims,))
    if any(p < 0 for p in pads):
        raise LayoutError("pads must be non-negative, got %r" % (pads,))
    inflated = [d + 2 * p for d, p in zip(dims, pads)]
    strides = row_major_strides(inflated)
    offset = sum(p * st for p, st in zip(pads, strides))
    return strides, offset


@dataclass(frozen=True)
class LayoutDescriptor:
    """Addressing recipe for one blocked image.

    ``logical_dims`` is (batch, fmap-blocks, x, y, z).  Strides are counted
    in lane groups, not elements; the lane dimension is always dense.
    """

    logical_dims: tuple[int, ...]
    strides: tuple[int, ...]
    initial_offset: int

    def __post_init__(self):
        if len(self.logical_dims) != 5 or len(self.strides) != 5:
            raise LayoutError("image descriptors are rank 5")
        if any(d < 1 for d in self.logical_dims):
            raise LayoutError("logical dims must be positive, got %r" % (self.logical_dims,))
        if self.initial_offset < 0 or any(s < 0 for s in self.strides):
            raise LayoutError("offsets and strides must be non-negative")

    @classmethod
    def dense(cls, logical_dims) -> "LayoutDescriptor":
        dims = tuple(int(d) for d in logical_dims)
        return cls(dims, row_major_strides(dims), 0)

    @property
    def is_dense(self) -> bool:
        return self.initial_offset == 0 and self.strides == row_major_strides(self.logical_dims)

    def group_span(self) -> int:
        """One past the highest lane-group offset the descriptor can address."""
        return self.initial_offset + sum(
            (d - 1) * s for d, s in zip(self.logical_dims, self.strides)
        ) + 1


def padded_view_descriptor(logical_dims, pads) -> LayoutDescriptor:
    """Descriptor for the interior of a zero-halo allocation.

    ``logical_dims`` is the rank-5 blocked shape of the interior and
    ``pads`` the spatial halo (px, py, pz).  Batch and fmap-block
    dimensions are never padded.
    """
    dims = tuple(int(d) for d in logical_dims)
    if len(dims) != 5:
        raise LayoutError("image descriptors are rank 5")
    px, py, pz = (int(p) for p in pads)
    strides, offset = padded_strides(dims, (0, 0, px, py, pz))
    return LayoutDescriptor(dims, strides, offset)


def blocked_index(b: int, f: int, x: int, y: int, z: int,
                  desc: LayoutDescriptor, simd: int) -> int:
    """Flat element index of logical coordinate (b, f, x, y, z)."""
    simd = validate_simd_width(simd)
    nb, nfb, nx, ny, nz = desc.logical_dims
    if not 0 <= b < nb:
        raise LayoutError("batch index %d out of range [0, %d)" % (b, nb))
    if not 0 <= f < nfb * simd:
        raise LayoutError("fmap index %d out of range [0, %d)" % (f, nfb * simd))
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise LayoutError("spatial index (%d, %d, %d) out of range" % (x, y, z))
    sb, sf, sx, sy, sz = desc.strides
    group = desc.initial_offset + b * sb + (f // simd) * sf + x * sx + y * sy + z * sz
    return group * simd + (f % simd)


@dataclass
class BlockedTensor:
    """A blocked image: flat storage plus the descriptor that addresses it.

    ``allocated_dims`` is the rank-5 blocked shape of the whole allocation;
    it equals ``descriptor.logical_dims`` for dense tensors and the
    halo-inflated shape for padded views.  ``fmaps`` is the logical feature
    map count; lanes past it in the last block hold zeros.
    """

    descriptor: LayoutDescriptor
    simd: int
    data: np.ndarray
    allocated_dims: tuple[int, ...]
    fmaps: int

    def __post_init__(self):
        self.simd = validate_simd_width(self.simd)
        if self.data.dtype != ELEMENT_DTYPE or self.data.ndim != 1:
            raise LayoutError("storage must be a flat float32 array")
        need = int(np.prod(self.allocated_dims)) * self.simd
        if self.data.size != need:
            raise LayoutError(
                "storage holds %d elements, allocation needs %d" % (self.data.size, need)
            )
        if self.descriptor.group_span() * self.simd > self.data.size:
            raise LayoutError("descriptor addresses past the end of storage")
        if fmap_blocks(self.fmaps, self.simd) != self.descriptor.logical_dims[1]:
            raise LayoutError(
                "%d fmaps do not fill %d blocks of width %d"
                % (self.fmaps, self.descriptor.logical_dims[1], self.simd)
            )

    @classmethod
    def zeros(cls, batch: int, fmaps: int, spatial, simd: int,
              pads=(0, 0, 0)) -> "BlockedTensor":
        """Allocate a zeroed tensor, optionally with a spatial zero halo."""
        simd = validate_simd_width(simd)
        fb = fmap_blocks(fmaps, simd)
        x, y, z = (int(d) for d in spatial)
        px, py, pz = (int(p) for p in pads)
        logical = (int(batch), fb, x, y, z)
        allocated = (int(batch), fb, x + 2 * px, y + 2 * py, z + 2 * pz)
        if (px, py, pz) == (0, 0, 0):
            desc = LayoutDescriptor.dense(logical)
        else:
            desc = padded_view_descriptor(logical, (px, py, pz))
        data = np.zeros(int(np.prod(allocated)) * simd, dtype=ELEMENT_DTYPE)
        return cls(desc, simd, data, allocated, int(fmaps))

    @property
    def view(self) -> np.ndarray:
        """Writable rank-6 view (batch, block, x, y, z, lane) of the logical image."""
        desc = self.descriptor
        shape = desc.logical_dims + (self.simd,)
        strides = tuple(s * self.simd * ELEMENT_SIZE for s in desc.strides) + (ELEMENT_SIZE,)
        base = self.data[desc.initial_offset * self.simd:]
        return as_strided(base, shape=shape, strides=strides)

    @property
    def allocation_view(self) -> np.ndarray:
        """Rank-6 view of the whole allocation, halo included."""
        return self.data.reshape(self.allocated_dims + (self.simd,))


def to_blocked(std: np.ndarray, simd: int) -> BlockedTensor:
    """Block a standard (batch, fmap, x, y, z) image; tail lanes become zero."""
    simd = validate_simd_width(simd)
    std = np.asarray(std)
    if std.ndim != 5:
        raise LayoutError("expected a rank-5 image, got rank %d" % std.ndim)
    std = std.astype(ELEMENT_DTYPE, copy=False)
    nb, nf, nx, ny, nz = std.shape
    fb = fmap_blocks(nf, simd)
    lifted = np.zeros((nb, fb * simd, nx, ny, nz), dtype=ELEMENT_DTYPE)
    lifted[:, :nf] = std
    six = lifted.reshape(nb, fb, simd, nx, ny, nz).transpose(0, 1, 3, 4, 5, 2)
    out = BlockedTensor.zeros(nb, nf, (nx, ny, nz), simd)
    out.view[...] = six
    return out


def from_blocked(t: BlockedTensor) -> np.ndarray:
    """Recover the standard image; for padded views this reads the interior."""
    nb, fb, nx, ny, nz = t.descriptor.logical_dims
    six = np.ascontiguousarray(t.view)
    std = six.transpose(0, 1, 5, 2, 3, 4).reshape(nb, fb * t.simd, nx, ny, nz)
    return std[:, :t.fmaps].copy()


@dataclass
class BlockedKernel:
    """A blocked kernel bank: (out-block, in-block, kx, ky, kz, out-lane, in-lane)."""

    out_blocks: int
    in_blocks: int
    kdims: tuple[int, int, int]
    simd: int
    data: np.ndarray
    out_fmaps: int
    in_fmaps: int

    def __post_init__(self):
        self.simd = validate_simd_width(self.simd)
        need = self.out_blocks * self.in_blocks * int(np.prod(self.kdims)) * self.simd ** 2
        if self.data.dtype != ELEMENT_DTYPE or self.data.size != need:
            raise LayoutError("kernel storage does not match its dimensions")

    @property
    def view(self) -> np.ndarray:
        kx, ky, kz = self.kdims
        return self.data.reshape(
            self.out_blocks, self.in_blocks, kx, ky, kz, self.simd, self.simd
        )


def kernel_to_blocked(kernel: np.ndarray, simd: int) -> BlockedKernel:
    """Block a standard (out-fmap, in-fmap, kx, ky, kz) kernel bank.

    Rows and columns past the logical fmap counts are zero, which keeps
    tail lanes of every convolution output at zero.
    """
    simd = validate_simd_width(simd)
    kernel = np.asarray(kernel)
    if kernel.ndim != 5:
        raise LayoutError("expected a rank-5 kernel bank, got rank %d" % kernel.ndim)
    kernel = kernel.astype(ELEMENT_DTYPE, copy=False)
    fo, fi, kx, ky, kz = kernel.shape
    ob = fmap_blocks(fo, simd)
    ib = fmap_blocks(fi, simd)
    lifted = np.zeros((ob * simd, ib * simd, kx, ky, kz), dtype=ELEMENT_DTYPE)
    lifted[:fo, :fi] = kernel
    seven = lifted.reshape(ob, simd, ib, simd, kx, ky, kz).transpose(0, 2, 4, 5, 6, 1, 3)
    data = np.ascontiguousarray(seven).reshape(-1)
    return BlockedKernel(ob, ib, (kx, ky, kz), simd, data, fo, fi)


def explicit_zero_pad(t: BlockedTensor, pads) -> BlockedTensor:
    """Materialize a zero-padded copy of ``t`` as a dense blocked tensor.

    The flat storage this produces is bit-identical to allocating a zeroed
    halo buffer and writing ``t`` through ``padded_view_descriptor``; the
    view route just skips the copy.
    """
    px, py, pz = (int(p) for p in pads)
    nb, fb, nx, ny, nz = t.descriptor.logical_dims
    out = BlockedTensor.zeros(nb, t.fmaps, (nx + 2 * px, ny + 2 * py, nz + 2 * pz), t.simd)
    out.view[:, :, px:px + nx, py:py + ny, pz:pz + nz, :] = t.view
    return out
