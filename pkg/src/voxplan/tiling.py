"""Patchwise execution of a fixed-shape plan over a larger volume.

A plan is compiled for one input patch shape.  To run a bigger volume the
volume is cut into overlapping input tiles of exactly that shape, each
tile runs through the plan independently, and the per-tile outputs are
stitched so every output voxel is written by exactly one tile.

Geometry per axis, with input patch extent p and output extent o:

* The network's shrinkage m = p - o (zero for size-preserving networks)
  is the minimum input overlap; with it, output tiles abut exactly.
* Extra overlap beyond m trims (overlap - m) / 2 voxels from each
  interior seam side, moving the seam into better-conditioned territory
  while keeping the exactly-once write rule.  (overlap - m) must be even
  so both neighbours trim the same amount.
* The last tile along an axis is clamped to end at the volume edge and
  keeps everything the previous tiles did not write.

Tiles are independent tasks and may run on a thread pool; the compiled
backend releases the GIL inside its inner loops, so workers overlap.
Assembly into the output volume happens serially in the caller.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ExecutionError, TileError
from .executor import PlanRunner
from .plan import ExecutionPlan

WORKERS_ENV = "VOXPLAN_WORKERS"


@dataclass(frozen=True)
class Tile:
    """One patch: where it reads, what it keeps, where that lands."""

    index: tuple[int, int, int]
    in_lo: tuple[int, int, int]        # input-volume origin of the patch
    keep_lo: tuple[int, int, int]      # kept region, tile-local output coords
    keep_hi: tuple[int, int, int]
    out_lo: tuple[int, int, int]       # where the kept region lands

    @property
    def in_slices(self):
        return tuple(slice(lo, None) for lo in self.in_lo)

    def input_window(self, patch_in):
        return tuple(slice(lo, lo + p) for lo, p in zip(self.in_lo, patch_in))

    @property
    def local_window(self):
        return tuple(slice(lo, hi) for lo, hi in zip(self.keep_lo, self.keep_hi))

    @property
    def out_window(self):
        return tuple(
            slice(o, o + hi - lo)
            for o, lo, hi in zip(self.out_lo, self.keep_lo, self.keep_hi)
        )


@dataclass(frozen=True)
class TileGrid:
    """Complete decomposition of a volume into plan-shaped patches."""

    counts: tuple[int, int, int]
    tiles: tuple[Tile, ...]
    patch_in: tuple[int, int, int]
    patch_out: tuple[int, int, int]
    volume_in: tuple[int, int, int]
    volume_out: tuple[int, int, int]
    overlap: tuple[int, int, int]


def _axis_cuts(extent, patch, shrink, overlap):
    """Per-axis tile positions as (in_lo, keep_lo, keep_hi) in output coords."""
    out = patch - shrink
    if patch > extent:
        raise TileError(
            "volume extent %d is smaller than the plan's input patch %d"
            % (extent, patch)
        )
    if overlap < shrink:
        raise TileError(
            "overlap %d is below the network's shrinkage %d" % (overlap, shrink)
        )
    if (overlap - shrink) % 2:
        raise TileError(
            "overlap minus shrinkage must be even, got %d - %d"
            % (overlap, shrink)
        )
    stride = patch - overlap
    if stride < 1:
        raise TileError(
            "overlap %d leaves no fresh output per tile of extent %d"
            % (overlap, patch)
        )
    trim = (overlap - shrink) // 2
    if extent == patch:
        return [(0, 0, out)]
    count = 1 + math.ceil((extent - patch) / stride)
    cuts = []
    prev_hi = 0
    for k in range(count):
        lo = min(k * stride, extent - patch)
        raw_hi = lo + out
        keep_hi = raw_hi if k == count - 1 else raw_hi - trim
        cuts.append((lo, prev_hi, keep_hi))
        prev_hi = keep_hi
    return cuts


def plan_tiles(volume_spatial, patch_in, patch_out, overlap=None) -> TileGrid:
    """Decompose a spatial extent into exactly-once output tiles.

    ``overlap`` is the input overlap between neighbouring tiles, per axis
    or as a single integer; it defaults to the network's shrinkage.
    """
    volume_spatial = tuple(int(v) for v in volume_spatial)
    patch_in = tuple(int(p) for p in patch_in)
    patch_out = tuple(int(p) for p in patch_out)
    shrink = tuple(i - o for i, o in zip(patch_in, patch_out))
    if any(s < 0 for s in shrink):
        raise TileError("output patch larger than input patch")
    if overlap is None:
        overlap = shrink
    elif np.isscalar(overlap):
        overlap = (int(overlap),) * 3
    else:
        overlap = tuple(int(v) for v in overlap)
    axes = [
        _axis_cuts(volume_spatial[d], patch_in[d], shrink[d], overlap[d])
        for d in range(3)
    ]
    tiles = []
    for ix, cx in enumerate(axes[0]):
        for iy, cy in enumerate(axes[1]):
            for iz, cz in enumerate(axes[2]):
                tiles.append(Tile(
                    index=(ix, iy, iz),
                    in_lo=(cx[0], cy[0], cz[0]),
                    keep_lo=(cx[1] - cx[0], cy[1] - cy[0], cz[1] - cz[0]),
                    keep_hi=(cx[2] - cx[0], cy[2] - cy[0], cz[2] - cz[0]),
                    out_lo=(cx[1], cy[1], cz[1]),
                ))
    return TileGrid(
        counts=(len(axes[0]), len(axes[1]), len(axes[2])),
        tiles=tuple(tiles),
        patch_in=patch_in,
        patch_out=patch_out,
        volume_in=volume_spatial,
        volume_out=tuple(v - s for v, s in zip(volume_spatial, shrink)),
        overlap=overlap,
    )


def worker_count(requested=None) -> int:
    """Resolve the tile worker count against the environment cap."""
    cap = os.environ.get(WORKERS_ENV)
    if requested is None:
        requested = int(cap) if cap else 1
    elif cap:
        requested = min(int(requested), int(cap))
    return max(1, int(requested))


def _plan_io(plan: ExecutionPlan):
    if len(plan.inputs) != 1 or len(plan.outputs) != 1:
        raise TileError("tiled execution needs a single-input single-output plan")
    _, _, in_dims = plan.inputs[0]
    out_name, _, out_dims = plan.outputs[0]
    return in_dims, out_name, out_dims


def grid_for(plan: ExecutionPlan, volume_spatial, overlap=None) -> TileGrid:
    """Tile geometry for running ``plan`` over ``volume_spatial``."""
    in_dims, _, out_dims = _plan_io(plan)
    return plan_tiles(volume_spatial, in_dims[2:], out_dims[2:], overlap)


def run_tiled(plan: ExecutionPlan, volume, *, overlap=None, backend=None,
              workers=None, grid: TileGrid | None = None) -> np.ndarray:
    """Run ``plan`` patchwise over a (batch, fmap, x, y, z) volume."""
    volume = np.asarray(volume)
    if volume.ndim != 5:
        raise ExecutionError(
            "tiled input must have rank 5, got rank %d" % volume.ndim
        )
    in_dims, _, out_dims = _plan_io(plan)
    if volume.shape[:2] != tuple(in_dims[:2]):
        raise ExecutionError(
            "volume batch/fmaps %s do not match the plan's %s"
            % (volume.shape[:2], tuple(in_dims[:2]))
        )
    if grid is None:
        grid = grid_for(plan, volume.shape[2:], overlap)
    elif grid.volume_in != volume.shape[2:]:
        raise TileError("tile grid was planned for a different volume shape")

    out = np.empty(tuple(out_dims[:2]) + grid.volume_out, dtype=np.float32)
    workers = worker_count(workers)

    runners = [PlanRunner(plan, backend=backend)
               for _ in range(min(workers, len(grid.tiles)))]
    pool_lock = threading.Lock()

    def run_one(tile: Tile):
        with pool_lock:
            runner = runners.pop()
        try:
            patch = volume[(slice(None), slice(None))
                           + tile.input_window(grid.patch_in)]
            result = next(iter(runner.run(patch).values()))
        finally:
            with pool_lock:
                runners.append(runner)
        return tile, result

    if len(runners) == 1:
        produced = map(run_one, grid.tiles)
        for tile, result in produced:
            window = (slice(None), slice(None)) + tile.local_window
            out[(slice(None), slice(None)) + tile.out_window] = result[window]
    else:
        with ThreadPoolExecutor(max_workers=len(runners)) as pool:
            for tile, result in pool.map(run_one, grid.tiles):
                window = (slice(None), slice(None)) + tile.local_window
                out[(slice(None), slice(None)) + tile.out_window] = result[window]
    return out
