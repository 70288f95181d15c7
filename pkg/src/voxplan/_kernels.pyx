# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution inner loops.

The hot path is an outer-product accumulate: for each voxel of an output
patch, one input lane value updates all output lanes of the accumulator
through a contiguous kernel row, which the C compiler turns into a single
fused multiply-add over the lane vector.  The accumulator lives in a
patch-sized scratch block so all kernel offsets and input blocks hit warm
cache lines.

Contract (enforced by the adapter in ``kernels_cy``): ``in_view``,
``base_view``, and ``kernel`` are C-contiguous; ``kernel`` is lane
transposed to (out_block, in_block, kx, ky, kz, in_lane, out_lane);
``out_view`` may be a strided interior of a halo allocation but its lane
axis is contiguous.
"""

from libc.stdlib cimport free, malloc

ctypedef float f32

cdef extern from "<math.h>" nogil:
    float expm1f(float)
    float expf(float)

cdef extern from "convcore.h" nogil:
    void vx_conv_rows1_s8(f32* acc, const f32* inp, const f32* kp)
    void vx_conv_rows4_s8(f32* acc, const f32* inp, Py_ssize_t zstep,
                          const f32* kp)

AVAILABLE = True


cdef inline f32 _act(f32 v, int code, f32 alpha) nogil:
    if code == 1:
        return v if v > 0 else <f32>0.0
    if code == 2:
        return v if v > 0 else alpha * expm1f(v)
    if code == 3:
        return <f32>1.0 / (<f32>1.0 + expf(-v))
    return v


def conv3d(f32[:, :, :, :, :, ::1] in_view not None,
           f32[:, :, :, :, :, :, ::1] kernel not None,
           f32[::1] bias not None,
           f32[:, :, :, :, :, :] out_view not None,
           f32[:, :, :, :, :, ::1] base_view not None,
           f32[::1] base_scale not None,
           bint additive, bint has_scale,
           int sx, int sy, int sz,
           int tpx, int tpy, int tpz,
           int act_code, f32 alpha):
    """Full blocked convolution with init/accumulate/store epilogue."""
    cdef Py_ssize_t B = out_view.shape[0], OB = out_view.shape[1]
    cdef Py_ssize_t OX = out_view.shape[2], OY = out_view.shape[3], OZ = out_view.shape[4]
    cdef Py_ssize_t IB = kernel.shape[1]
    cdef Py_ssize_t KX = kernel.shape[2], KY = kernel.shape[3], KZ = kernel.shape[4]
    cdef Py_ssize_t IX = in_view.shape[2], IY = in_view.shape[3], IZ = in_view.shape[4]
    cdef int s = <int>out_view.shape[5]
    # element strides of the C-contiguous input (and base) allocations
    cdef Py_ssize_t in_sz = s
    cdef Py_ssize_t in_sy = IZ * in_sz
    cdef Py_ssize_t in_sx = IY * in_sy
    cdef Py_ssize_t in_sib = IX * in_sx
    cdef Py_ssize_t in_sb = in_view.shape[1] * in_sib
    cdef Py_ssize_t bs_x = 0, bs_y = 0, bs_z = 0, bs_ib = 0, bs_b = 0
    if additive:
        bs_z = s
        bs_y = base_view.shape[4] * bs_z
        bs_x = base_view.shape[3] * bs_y
        bs_ib = base_view.shape[2] * bs_x
        bs_b = base_view.shape[1] * bs_ib
    cdef f32* inp = &in_view[0, 0, 0, 0, 0, 0]
    cdef f32* kp0 = &kernel[0, 0, 0, 0, 0, 0, 0]
    cdef f32* basep = NULL
    if additive:
        basep = &base_view[0, 0, 0, 0, 0, 0]
    cdef Py_ssize_t kstride_o = <Py_ssize_t>s * s
    cdef Py_ssize_t kstride_off = kstride_o  # one (i, o) tile per offset
    cdef f32* acc = <f32*>malloc(<size_t>tpx * tpy * tpz * s * sizeof(f32))
    if acc == NULL:
        raise MemoryError()
    cdef Py_ssize_t zstep = <Py_ssize_t>sz * s
    cdef Py_ssize_t b, ob, ib, x0, y0, z0, px, py, pz
    cdef Py_ssize_t dx, dy, dz, xx, yy, zz, i, o, aidx
    cdef f32 v
    cdef f32* ip
    cdef f32* ipv
    cdef f32* kp
    cdef f32* krow
    cdef f32* ap
    cdef f32* brow
    with nogil:
        for b in range(B):
            for ob in range(OB):
                x0 = 0
                while x0 < OX:
                    px = OX - x0
                    if px > tpx:
                        px = tpx
                    y0 = 0
                    while y0 < OY:
                        py = OY - y0
                        if py > tpy:
                            py = tpy
                        z0 = 0
                        while z0 < OZ:
                            pz = OZ - z0
                            if pz > tpz:
                                pz = tpz
                            # init: bias, plus scaled base when additive
                            aidx = 0
                            for xx in range(px):
                                for yy in range(py):
                                    for zz in range(pz):
                                        for o in range(s):
                                            acc[aidx + o] = bias[ob * s + o]
                                        if additive:
                                            brow = basep + b * bs_b + ob * bs_ib \
                                                + (x0 + xx) * bs_x + (y0 + yy) * bs_y \
                                                + (z0 + zz) * bs_z
                                            if has_scale:
                                                for o in range(s):
                                                    acc[aidx + o] += base_scale[ob * s + o] * brow[o]
                                            else:
                                                for o in range(s):
                                                    acc[aidx + o] += brow[o]
                                        aidx += s
                            # accumulate: input blocks ascending, z fastest
                            for ib in range(IB):
                                kp = kp0 + (((ob * IB + ib) * KX) * KY * KZ) * kstride_off
                                for dx in range(KX):
                                    for dy in range(KY):
                                        for dz in range(KZ):
                                            aidx = 0
                                            for xx in range(px):
                                                for yy in range(py):
                                                    ip = inp + b * in_sb + ib * in_sib \
                                                        + ((x0 + xx) * sx + dx) * in_sx \
                                                        + ((y0 + yy) * sy + dy) * in_sy \
                                                        + dz * in_sz + z0 * zstep
                                                    if s == 8:
                                                        zz = 0
                                                        while zz + 4 <= pz:
                                                            vx_conv_rows4_s8(acc + aidx,
                                                                             ip + zz * zstep,
                                                                             zstep, kp)
                                                            aidx += 32
                                                            zz += 4
                                                        while zz < pz:
                                                            vx_conv_rows1_s8(acc + aidx,
                                                                             ip + zz * zstep, kp)
                                                            aidx += 8
                                                            zz += 1
                                                    else:
                                                        for zz in range(pz):
                                                            ipv = ip + zz * zstep
                                                            ap = acc + aidx
                                                            for i in range(s):
                                                                v = ipv[i]
                                                                krow = kp + i * s
                                                                for o in range(s):
                                                                    ap[o] += v * krow[o]
                                                            aidx += s
                                            kp += kstride_off
                            # store with the fused epilogue
                            aidx = 0
                            for xx in range(px):
                                for yy in range(py):
                                    for zz in range(pz):
                                        for o in range(s):
                                            out_view[b, ob, x0 + xx, y0 + yy, z0 + zz, o] = \
                                                _act(acc[aidx + o], act_code, alpha)
                                        aidx += s
                            z0 += tpz
                        y0 += tpy
                    x0 += tpx
    free(acc)


def subimage(f32[:, :, :, :, :, ::1] in_view not None,
             f32[:, :, :, :, :, :, ::1] kernel not None,
             f32[::1] bias not None,
             f32[:, :, :, :, :, :] out_view not None,
             f32[:, :, :, :, :, ::1] base_view not None,
             f32[::1] base_scale not None,
             bint additive, bint has_scale,
             int sx, int sy, int sz,
             int ib, int ob,
             int x0, int y0, int z0,
             int px, int py, int pz,
             bint first, bint last,
             int act_code, f32 alpha):
    """One input block's contribution to one output patch, through memory."""
    cdef Py_ssize_t B = out_view.shape[0]
    cdef Py_ssize_t KX = kernel.shape[2], KY = kernel.shape[3], KZ = kernel.shape[4]
    cdef Py_ssize_t IX = in_view.shape[2], IY = in_view.shape[3], IZ = in_view.shape[4]
    cdef int s = <int>out_view.shape[5]
    cdef Py_ssize_t in_sz = s
    cdef Py_ssize_t in_sy = IZ * in_sz
    cdef Py_ssize_t in_sx = IY * in_sy
    cdef Py_ssize_t in_sib = IX * in_sx
    cdef Py_ssize_t in_sb = in_view.shape[1] * in_sib
    cdef f32* inp = &in_view[0, 0, 0, 0, 0, 0]
    cdef f32* kp0 = &kernel[0, 0, 0, 0, 0, 0, 0]
    cdef Py_ssize_t IBt = kernel.shape[1]
    cdef f32* acc = <f32*>malloc(<size_t>px * py * pz * s * sizeof(f32))
    if acc == NULL:
        raise MemoryError()
    cdef Py_ssize_t b, dx, dy, dz, xx, yy, zz, i, o, aidx
    cdef f32 v
    cdef f32* ip
    cdef f32* kp
    cdef f32* krow
    cdef f32* ap
    with nogil:
        for b in range(B):
            aidx = 0
            for xx in range(px):
                for yy in range(py):
                    for zz in range(pz):
                        if first:
                            for o in range(s):
                                acc[aidx + o] = bias[ob * s + o]
                            if additive:
                                if has_scale:
                                    for o in range(s):
                                        acc[aidx + o] += base_scale[ob * s + o] * \
                                            base_view[b, ob, x0 + xx, y0 + yy, z0 + zz, o]
                                else:
                                    for o in range(s):
                                        acc[aidx + o] += \
                                            base_view[b, ob, x0 + xx, y0 + yy, z0 + zz, o]
                        else:
                            for o in range(s):
                                acc[aidx + o] = out_view[b, ob, x0 + xx, y0 + yy, z0 + zz, o]
                        aidx += s
            kp = kp0 + (((<Py_ssize_t>ob * IBt + ib) * KX) * KY * KZ) * s * s
            for dx in range(KX):
                for dy in range(KY):
                    for dz in range(KZ):
                        aidx = 0
                        for xx in range(px):
                            for yy in range(py):
                                ip = inp + b * in_sb + ib * in_sib \
                                    + ((x0 + xx) * sx + dx) * in_sx \
                                    + ((y0 + yy) * sy + dy) * in_sy \
                                    + dz * in_sz
                                for zz in range(pz):
                                    for i in range(s):
                                        v = ip[(z0 + zz) * sz * s + i]
                                        krow = kp + i * s
                                        ap = acc + aidx
                                        for o in range(s):
                                            ap[o] += v * krow[o]
                                    aidx += s
                        kp += s * s
            aidx = 0
            for xx in range(px):
                for yy in range(py):
                    for zz in range(pz):
                        if last:
                            for o in range(s):
                                out_view[b, ob, x0 + xx, y0 + yy, z0 + zz, o] = \
                                    _act(acc[aidx + o], act_code, alpha)
                        else:
                            for o in range(s):
                                out_view[b, ob, x0 + xx, y0 + yy, z0 + zz, o] = acc[aidx + o]
                        aidx += s
    free(acc)
