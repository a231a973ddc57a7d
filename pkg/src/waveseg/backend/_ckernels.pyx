# cython: language_level=3, boundscheck=False, wraparound=False
"""Cython shim around the C conv3d kernels (float32, stride 1)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef extern from "convkernels.h":
    void ws_conv3d_fwd_f32(const float *x, const float *w, float *y,
                           int B, int Cin, int D, int H, int W,
                           int Cout, int kd, int kh, int kw,
                           int pd, int ph, int pw, int groups,
                           int OD, int OH, int OW) nogil
    void ws_conv3d_bww_f32(const float *x, const float *gy, float *gw,
                           int B, int Cin, int D, int H, int W,
                           int Cout, int kd, int kh, int kw,
                           int pd, int ph, int pw, int groups,
                           int OD, int OH, int OW) nogil


def conv3d_forward(cnp.ndarray x, cnp.ndarray w, tuple padding, int groups):
    cdef cnp.ndarray[cnp.float32_t, ndim=5, mode="c"] xc = np.ascontiguousarray(x, dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=5, mode="c"] wc = np.ascontiguousarray(w, dtype=np.float32)
    cdef int B = xc.shape[0], Cin = xc.shape[1], D = xc.shape[2], H = xc.shape[3], W = xc.shape[4]
    cdef int Cout = wc.shape[0], kd = wc.shape[2], kh = wc.shape[3], kw = wc.shape[4]
    cdef int pd = padding[0], ph = padding[1], pw = padding[2]
    cdef int OD = D + 2 * pd - kd + 1
    cdef int OH = H + 2 * ph - kh + 1
    cdef int OW = W + 2 * pw - kw + 1
    cdef cnp.ndarray[cnp.float32_t, ndim=5, mode="c"] y = np.empty((B, Cout, OD, OH, OW), dtype=np.float32)
    with nogil:
        ws_conv3d_fwd_f32(&xc[0, 0, 0, 0, 0], &wc[0, 0, 0, 0, 0], &y[0, 0, 0, 0, 0],
                          B, Cin, D, H, W, Cout, kd, kh, kw, pd, ph, pw, groups, OD, OH, OW)
    return y


def conv3d_backward_w(cnp.ndarray x, cnp.ndarray gy, tuple padding, int groups):
    cdef cnp.ndarray[cnp.float32_t, ndim=5, mode="c"] xc = np.ascontiguousarray(x, dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=5, mode="c"] gc = np.ascontiguousarray(gy, dtype=np.float32)
    cdef int B = xc.shape[0], Cin = xc.shape[1], D = xc.shape[2], H = xc.shape[3], W = xc.shape[4]
    cdef int Cout = gc.shape[1], OD = gc.shape[2], OH = gc.shape[3], OW = gc.shape[4]
    cdef int pd = padding[0], ph = padding[1], pw = padding[2]
    cdef int kd = D + 2 * pd - OD + 1
    cdef int kh = H + 2 * ph - OH + 1
    cdef int kw = W + 2 * pw - OW + 1
    cdef cnp.ndarray[cnp.float32_t, ndim=5, mode="c"] gw = np.zeros(
        (Cout, Cin // groups, kd, kh, kw), dtype=np.float32)
    with nogil:
        ws_conv3d_bww_f32(&xc[0, 0, 0, 0, 0], &gc[0, 0, 0, 0, 0], &gw[0, 0, 0, 0, 0],
                          B, Cin, D, H, W, Cout, kd, kh, kw, pd, ph, pw, groups, OD, OH, OW)
    return gw
