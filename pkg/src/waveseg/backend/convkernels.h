#ifndef WAVESEG_CONVKERNELS_H
#define WAVESEG_CONVKERNELS_H

/* Direct float32 3D convolution kernels.
 *
 * Activations are (B, C, D, H, W), weights (Cout, Cin/groups, kd, kh, kw),
 * all C-contiguous. The forward kernel writes every output voxel; the
 * weight-gradient kernel accumulates into a zero-initialised gw buffer.
 * Only stride 1 is implemented here; callers handle other strides via the
 * reference path.
 */

void ws_conv3d_fwd_f32(const float *x, const float *w, float *y,
                       int B, int Cin, int D, int H, int W,
                       int Cout, int kd, int kh, int kw,
                       int pd, int ph, int pw, int groups,
                       int OD, int OH, int OW);

void ws_conv3d_bww_f32(const float *x, const float *gy, float *gw,
                       int B, int Cin, int D, int H, int W,
                       int Cout, int kd, int kh, int kw,
                       int pd, int ph, int pw, int groups,
                       int OD, int OH, int OW);

#endif
