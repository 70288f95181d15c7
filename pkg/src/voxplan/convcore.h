/* Lane-vector micro-kernels for the 8-wide blocked convolution.
 *
 * Each function advances a run of consecutive output voxels whose
 * accumulators sit side by side (8 floats per voxel).  One kernel row
 * (8 input lanes x 8 output lanes, output lane contiguous) is applied
 * per input lane value.  On GCC/Clang the arithmetic uses vector
 * extensions so every update is one fused multiply-add over the lane
 * vector; elsewhere a scalar fallback keeps the semantics.
 */
#ifndef VOXPLAN_CONVCORE_H
#define VOXPLAN_CONVCORE_H

#include <stddef.h>

#if defined(__GNUC__) || defined(__clang__)
#define VX_HAVE_VEC8 1
typedef float vx_f32x8 __attribute__((vector_size(32), aligned(4)));

static inline void vx_conv_rows1_s8(float *acc, const float *in,
                                    const float *kp)
{
    vx_f32x8 a0 = *(const vx_f32x8 *)acc;
    int i;
    for (i = 0; i < 8; i++) {
        vx_f32x8 k = *(const vx_f32x8 *)(kp + 8 * i);
        a0 += k * in[i];
    }
    *(vx_f32x8 *)acc = a0;
}

static inline void vx_conv_rows4_s8(float *acc, const float *in,
                                    ptrdiff_t zstep, const float *kp)
{
    /* Four voxels at once: four independent accumulator chains keep
     * the multiply-add pipeline full. */
    vx_f32x8 a0 = *(const vx_f32x8 *)(acc);
    vx_f32x8 a1 = *(const vx_f32x8 *)(acc + 8);
    vx_f32x8 a2 = *(const vx_f32x8 *)(acc + 16);
    vx_f32x8 a3 = *(const vx_f32x8 *)(acc + 24);
    int i;
    for (i = 0; i < 8; i++) {
        vx_f32x8 k = *(const vx_f32x8 *)(kp + 8 * i);
        a0 += k * in[i];
        a1 += k * in[zstep + i];
        a2 += k * in[2 * zstep + i];
        a3 += k * in[3 * zstep + i];
    }
    *(vx_f32x8 *)(acc) = a0;
    *(vx_f32x8 *)(acc + 8) = a1;
    *(vx_f32x8 *)(acc + 16) = a2;
    *(vx_f32x8 *)(acc + 24) = a3;
}

#else /* scalar fallback, same accumulation order */

static inline void vx_conv_rows1_s8(float *acc, const float *in,
                                    const float *kp)
{
    int i, o;
    for (i = 0; i < 8; i++) {
        float v = in[i];
        for (o = 0; o < 8; o++)
            acc[o] += kp[8 * i + o] * v;
    }
}

static inline void vx_conv_rows4_s8(float *acc, const float *in,
                                    ptrdiff_t zstep, const float *kp)
{
    int r;
    for (r = 0; r < 4; r++)
        vx_conv_rows1_s8(acc + 8 * r, in + r * zstep, kp);
}

#endif

#endif /* VOXPLAN_CONVCORE_H */
