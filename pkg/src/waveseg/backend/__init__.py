"""Kernel backend selection for the conv3d hot path.

The compiled extension (C kernels wrapped in Cython) covers float32
stride-1 convolutions, which is every convolution the network executes.
Anything else (float64 gradient checks, exotic strides) routes to the
numpy reference kernels, so results never depend on whether the extension
built. Set WAVESEG_BACKEND=numpy|compiled|auto to force a choice; the
default is auto (compiled when available).
"""

import os

import numpy as np

from ..errors import ConfigError
from . import numpy_kernels

_MODE = os.environ.get("WAVESEG_BACKEND", "auto")
if _MODE not in ("auto", "compiled", "numpy"):
    raise ConfigError(
        f"WAVESEG_BACKEND must be 'auto', 'compiled' or 'numpy', got {_MODE!r}")

_compiled = None
if _MODE in ("auto", "compiled"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _MODE == "compiled":
            raise ConfigError(
                "WAVESEG_BACKEND=compiled but the compiled extension is not built; "
                "reinstall with a C toolchain or use WAVESEG_BACKEND=numpy")
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"


def has_compiled() -> bool:
    return _compiled is not None


def _use_compiled(dtype, stride) -> bool:
    return _compiled is not None and dtype == np.dtype(np.float32) and tuple(stride) == (1, 1, 1)


def conv3d_forward(x, w, stride, padding, groups):
    if _use_compiled(x.dtype, stride):
        return _compiled.conv3d_forward(x, w, tuple(padding), groups)
    return numpy_kernels.conv3d_forward(x, w, stride, padding, groups)


def _flipped_transpose(w, groups):
    """Per-group (Cout, Cin/g) -> (Cin, Cout/g) swap with tap reversal.

    Turns the forward kernel into the input-gradient kernel: the adjoint of
    a stride-1 correlation is a correlation with this transformed weight and
    padding k-1-p.
    """
    cout, cpg_in, kd, kh, kw = w.shape
    cpg_out = cout // groups
    wt = np.empty((cpg_in * groups, cpg_out, kd, kh, kw), dtype=w.dtype)
    for g in range(groups):
        wg = w[g * cpg_out:(g + 1) * cpg_out]
        wt[g * cpg_in:(g + 1) * cpg_in] = wg.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1]
    return np.ascontiguousarray(wt)


def conv3d_backward_x(gy, w, x_shape, stride, padding, groups):
    kd, kh, kw = w.shape[2:]
    adj_pad = (kd - 1 - padding[0], kh - 1 - padding[1], kw - 1 - padding[2])
    if _use_compiled(gy.dtype, stride) and min(adj_pad) >= 0:
        wt = _flipped_transpose(np.asarray(w, dtype=np.float32), groups)
        return _compiled.conv3d_forward(gy, wt, adj_pad, groups)
    return numpy_kernels.conv3d_backward_x(gy, w, x_shape, stride, padding, groups)


def conv3d_backward_w(x, gy, w_shape, stride, padding, groups):
    if _use_compiled(gy.dtype, stride):
        return _compiled.conv3d_backward_w(x, gy, tuple(padding), groups)
    return numpy_kernels.conv3d_backward_w(x, gy, w_shape, stride, padding, groups)
