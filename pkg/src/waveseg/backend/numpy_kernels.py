"""Reference 3D convolution kernels built on numpy shift-and-add.

One tensordot per kernel tap, accumulated over taps. Works in any float
dtype (the gradient-check suite runs these in float64) and doubles as the
fallback when the compiled extension is not available.

Layouts: activations (B, C, D, H, W), weights (Cout, Cin/groups, kd, kh, kw),
all C-contiguous row-major.
"""

import numpy as np


def out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _pad_spatial(x, pads):
    pd, ph, pw = pads
    if pd == 0 and ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))


def conv3d_forward(x, w, stride, padding, groups):
    B, Cin, D, H, W = x.shape
    Cout, cpg_in, kd, kh, kw = w.shape
    sd, sh, sw = stride
    od = out_size(D, kd, sd, padding[0])
    oh = out_size(H, kh, sh, padding[1])
    ow = out_size(W, kw, sw, padding[2])
    cpg_out = Cout // groups
    xp = _pad_spatial(x, padding)
    y = np.empty((B, Cout, od, oh, ow), dtype=x.dtype)
    for g in range(groups):
        xg = xp[:, g * cpg_in:(g + 1) * cpg_in]
        wg = w[g * cpg_out:(g + 1) * cpg_out]
        # accumulate in (cpg_out, B, od, oh, ow) to keep tensordot outputs contiguous
        acc = np.zeros((cpg_out, B, od, oh, ow), dtype=x.dtype)
        for zd in range(kd):
            for zh in range(kh):
                for zw in range(kw):
                    view = xg[:, :, zd:zd + sd * od:sd, zh:zh + sh * oh:sh, zw:zw + sw * ow:sw]
                    acc += np.tensordot(wg[:, :, zd, zh, zw], view, axes=([1], [1]))
        y[:, g * cpg_out:(g + 1) * cpg_out] = acc.transpose(1, 0, 2, 3, 4)
    return y


def conv3d_backward_x(gy, w, x_shape, stride, padding, groups):
    B, Cin, D, H, W = x_shape
    Cout, cpg_in, kd, kh, kw = w.shape
    sd, sh, sw = stride
    pd, ph, pw = padding
    od, oh, ow = gy.shape[2:]
    cpg_out = Cout // groups
    gxp = np.zeros((B, Cin, D + 2 * pd, H + 2 * ph, W + 2 * pw), dtype=gy.dtype)
    for g in range(groups):
        gyg = gy[:, g * cpg_out:(g + 1) * cpg_out]
        wg = w[g * cpg_out:(g + 1) * cpg_out]
        gxg = gxp[:, g * cpg_in:(g + 1) * cpg_in]
        for zd in range(kd):
            for zh in range(kh):
                for zw in range(kw):
                    # (B, od, oh, ow, cpg_in) -> (B, cpg_in, od, oh, ow)
                    contrib = np.tensordot(gyg, wg[:, :, zd, zh, zw], axes=([1], [0]))
                    contrib = np.moveaxis(contrib, -1, 1)
                    gxg[:, :, zd:zd + sd * od:sd, zh:zh + sh * oh:sh, zw:zw + sw * ow:sw] += contrib
    if pd or ph or pw:
        return np.ascontiguousarray(gxp[:, :, pd:pd + D, ph:ph + H, pw:pw + W])
    return gxp


def conv3d_backward_w(x, gy, w_shape, stride, padding, groups):
    Cout, cpg_in, kd, kh, kw = w_shape
    sd, sh, sw = stride
    od, oh, ow = gy.shape[2:]
    cpg_out = Cout // groups
    xp = _pad_spatial(x, padding)
    gw = np.empty(w_shape, dtype=gy.dtype)
    for g in range(groups):
        xg = xp[:, g * cpg_in:(g + 1) * cpg_in]
        gyg = gy[:, g * cpg_out:(g + 1) * cpg_out]
        for zd in range(kd):
            for zh in range(kh):
                for zw in range(kw):
                    view = xg[:, :, zd:zd + sd * od:sd, zh:zh + sh * oh:sh, zw:zw + sw * ow:sw]
                    gw[g * cpg_out:(g + 1) * cpg_out, :, zd, zh, zw] = np.tensordot(
                        gyg, view, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw
