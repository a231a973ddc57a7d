/* Direct float32 3D convolution, stride 1, zero padding.
 *
 * Hot paths use GCC/Clang vector extensions (8-float lanes) with
 * restrict-qualified row pointers; accumulation order is fixed, so results
 * are deterministic run to run within one build.
 *
 * Forward: blocks of 8 output channels share every input load; weight
 * lanes past the block are zero so remainders reuse the same loop. Convs
 * with at most two output channels per group (attention heads) instead use
 * a per-channel row-accumulator axpy, which vectorises along the row.
 * Weight gradient: four output-channel dot-product lanes per pass.
 */

#include <stdlib.h>
#include <string.h>
#include "convkernels.h"

static inline int imax(int a, int b) { return a > b ? a : b; }
static inline int imin(int a, int b) { return a < b ? a : b; }

typedef float v8 __attribute__((vector_size(32)));

static size_t widx(int co, int ci, int zd, int zh, int zw,
                   int cpg_in, int kd, int kh, int kw)
{
    return (((((size_t)co * cpg_in + ci) * kd + zd) * kh + zh) * kw + zw);
}

/* Few output channels per group: per-channel contiguous row accumulator. */
static void fwd_axpy(const float *x, const float *w, float *y,
                     int B, int Cin, int D, int H, int W,
                     int Cout, int kd, int kh, int kw,
                     int pd, int ph, int pw, int groups,
                     int OD, int OH, int OW)
{
    const int cpg_in = Cin / groups;
    const int cpg_out = Cout / groups;
    const size_t xplane = (size_t)H * W;
    const size_t yplane = (size_t)OH * OW;
    float *const acc = malloc(sizeof(float) * (size_t)OW);

    for (int b = 0; b < B; b++)
    for (int g = 0; g < groups; g++)
    for (int co = 0; co < cpg_out; co++) {
        for (int od = 0; od < OD; od++)
        for (int oh = 0; oh < OH; oh++) {
            memset(acc, 0, sizeof(float) * (size_t)OW);
            for (int ci = 0; ci < cpg_in; ci++) {
                const float *const xc =
                    x + (((size_t)b * Cin + (size_t)g * cpg_in + ci) * D) * xplane;
                for (int zd = 0; zd < kd; zd++) {
                    const int id = od + zd - pd;
                    if (id < 0 || id >= D) continue;
                    for (int zh = 0; zh < kh; zh++) {
                        const int ih = oh + zh - ph;
                        if (ih < 0 || ih >= H) continue;
                        const float *const xrow = xc + (size_t)id * xplane + (size_t)ih * W;
                        for (int zw = 0; zw < kw; zw++) {
                            const int lo = imax(0, pw - zw);
                            const int hi = imin(OW, W + pw - zw);
                            const float wv =
                                w[widx(g * cpg_out + co, ci, zd, zh, zw, cpg_in, kd, kh, kw)];
                            const float *restrict xr = xrow + (zw - pw);
                            float *restrict ap = acc;
                            for (int ow = lo; ow < hi; ow++)
                                ap[ow] += wv * xr[ow];
                        }
                    }
                }
            }
            float *restrict yrow =
                y + (((size_t)b * Cout + (size_t)g * cpg_out + co) * OD + od) * yplane
                  + (size_t)oh * OW;
            memcpy(yrow, acc, sizeof(float) * (size_t)OW);
        }
    }
    free(acc);
}

void ws_conv3d_fwd_f32(const float *x, const float *w, float *y,
                       int B, int Cin, int D, int H, int W,
                       int Cout, int kd, int kh, int kw,
                       int pd, int ph, int pw, int groups,
                       int OD, int OH, int OW)
{
    const int cpg_in = Cin / groups;
    const int cpg_out = Cout / groups;
    if (cpg_out <= 2) {
        fwd_axpy(x, w, y, B, Cin, D, H, W, Cout, kd, kh, kw,
                 pd, ph, pw, groups, OD, OH, OW);
        return;
    }
    const size_t xplane = (size_t)H * W;
    const size_t yplane = (size_t)OH * OW;
    v8 *const acc = aligned_alloc(32, sizeof(v8) * (size_t)OW);
    const float *const accs = (const float *)acc;

    for (int b = 0; b < B; b++)
    for (int g = 0; g < groups; g++)
    for (int co0 = 0; co0 < cpg_out; co0 += 8) {
        const int cb = imin(8, cpg_out - co0);
        for (int od = 0; od < OD; od++)
        for (int oh = 0; oh < OH; oh++) {
            memset(acc, 0, sizeof(v8) * (size_t)OW);
            for (int ci = 0; ci < cpg_in; ci++) {
                const float *const xc =
                    x + (((size_t)b * Cin + (size_t)g * cpg_in + ci) * D) * xplane;
                for (int zd = 0; zd < kd; zd++) {
                    const int id = od + zd - pd;
                    if (id < 0 || id >= D) continue;
                    for (int zh = 0; zh < kh; zh++) {
                        const int ih = oh + zh - ph;
                        if (ih < 0 || ih >= H) continue;
                        const float *const xrow = xc + (size_t)id * xplane + (size_t)ih * W;
                        for (int zw = 0; zw < kw; zw++) {
                            const int lo = imax(0, pw - zw);
                            const int hi = imin(OW, W + pw - zw);
                            const float *restrict xr = xrow + (zw - pw);
                            v8 wv = {0, 0, 0, 0, 0, 0, 0, 0};
                            for (int j = 0; j < cb; j++)
                                wv[j] = w[widx(g * cpg_out + co0 + j, ci, zd, zh, zw,
                                               cpg_in, kd, kh, kw)];
                            for (int ow = lo; ow < hi; ow++) {
                                const float xv = xr[ow];
                                const v8 xvv = {xv, xv, xv, xv, xv, xv, xv, xv};
                                acc[ow] += wv * xvv;
                            }
                        }
                    }
                }
            }
            for (int j = 0; j < cb; j++) {
                float *restrict yrow =
                    y + (((size_t)b * Cout + (size_t)g * cpg_out + co0 + j) * OD + od) * yplane
                      + (size_t)oh * OW;
                for (int ow = 0; ow < OW; ow++)
                    yrow[ow] = accs[(size_t)ow * 8 + j];
            }
        }
    }
    free(acc);
}

void ws_conv3d_bww_f32(const float *x, const float *gy, float *gw,
                       int B, int Cin, int D, int H, int W,
                       int Cout, int kd, int kh, int kw,
                       int pd, int ph, int pw, int groups,
                       int OD, int OH, int OW)
{
    const int cpg_in = Cin / groups;
    const int cpg_out = Cout / groups;
    const size_t xplane = (size_t)H * W;
    const size_t yplane = (size_t)OH * OW;
    const size_t cstride = (size_t)OD * yplane;

    for (int b = 0; b < B; b++)
    for (int g = 0; g < groups; g++)
    for (int ci = 0; ci < cpg_in; ci++) {
        const float *const xc =
            x + (((size_t)b * Cin + (size_t)g * cpg_in + ci) * D) * xplane;
        for (int zd = 0; zd < kd; zd++)
        for (int zh = 0; zh < kh; zh++)
        for (int zw = 0; zw < kw; zw++) {
            const int lo = imax(0, pw - zw);
            const int hi = imin(OW, W + pw - zw);
            if (lo >= hi) continue;
            const int off = zw - pw;
            for (int co0 = 0; co0 < cpg_out; co0 += 4) {
                const int cb = imin(4, cpg_out - co0);
                const float *const gbase =
                    gy + (((size_t)b * Cout + (size_t)g * cpg_out + co0) * OD) * yplane;
                v8 s0 = {0}, s1 = {0}, s2 = {0}, s3 = {0};
                float t0 = 0, t1 = 0, t2 = 0, t3 = 0;
                for (int od = 0; od < OD; od++) {
                    const int id = od + zd - pd;
                    if (id < 0 || id >= D) continue;
                    for (int oh = 0; oh < OH; oh++) {
                        const int ih = oh + zh - ph;
                        if (ih < 0 || ih >= H) continue;
                        const float *restrict xr =
                            xc + (size_t)id * xplane + (size_t)ih * W + off;
                        const size_t row = (size_t)od * yplane + (size_t)oh * OW;
                        if (cb == 4) {
                            const float *restrict g0 = gbase + row;
                            const float *restrict g1 = g0 + cstride;
                            const float *restrict g2 = g1 + cstride;
                            const float *restrict g3 = g2 + cstride;
                            int ow = lo;
                            for (; ow + 8 <= hi; ow += 8) {
                                v8 xv, a, c, d, e;
                                memcpy(&xv, xr + ow, 32);
                                memcpy(&a, g0 + ow, 32);
                                memcpy(&c, g1 + ow, 32);
                                memcpy(&d, g2 + ow, 32);
                                memcpy(&e, g3 + ow, 32);
                                s0 += a * xv;
                                s1 += c * xv;
                                s2 += d * xv;
                                s3 += e * xv;
                            }
                            for (; ow < hi; ow++) {
                                const float xv = xr[ow];
                                t0 += g0[ow] * xv;
                                t1 += g1[ow] * xv;
                                t2 += g2[ow] * xv;
                                t3 += g3[ow] * xv;
                            }
                        } else {
                            for (int j = 0; j < cb; j++) {
                                const float *restrict gj = gbase + (size_t)j * cstride + row;
                                v8 sj = {0};
                                float tj = 0;
                                int ow = lo;
                                for (; ow + 8 <= hi; ow += 8) {
                                    v8 xv, a;
                                    memcpy(&xv, xr + ow, 32);
                                    memcpy(&a, gj + ow, 32);
                                    sj += a * xv;
                                }
                                for (; ow < hi; ow++)
                                    tj += gj[ow] * xr[ow];
                                for (int l = 0; l < 8; l++)
                                    tj += sj[l];
                                if (j == 0) t0 += tj;
                                else if (j == 1) t1 += tj;
                                else t2 += tj;
                            }
                        }
                    }
                }
                const v8 sv[4] = {s0, s1, s2, s3};
                const float tv[4] = {t0, t1, t2, t3};
                for (int j = 0; j < cb; j++) {
                    float tot = tv[j];
                    for (int l = 0; l < 8; l++)
                        tot += sv[j][l];
                    gw[widx(g * cpg_out + co0 + j, ci, zd, zh, zw, cpg_in, kd, kh, kw)] += tot;
                }
            }
        }
    }
}
