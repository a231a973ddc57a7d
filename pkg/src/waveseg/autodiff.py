"""Reverse-mode autodiff over dense numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure; executing ops
builds an implicit graph through parent references. backward() replays the
recorded program in exact reverse execution order (a per-tensor sequence
number stamps the order), so gradients are deterministic. float32 is the
working precision for the network; every op also runs in float64, which is
what the finite-difference checks use.

Gradient arrays are never mutated in place. Accumulation always allocates
(g1 + g2), which lets pass-through ops hand the upstream gradient to their
parents without copying.
"""

import itertools
import threading

import numpy as np
from scipy.special import expit

from .errors import DimensionError, UsageError

_SEQ = itertools.count()

_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        self._saved = grad_enabled()
        _grad_state.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_state.enabled = self._saved
        return False


_ALLOWED_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _ALLOWED_DTYPES:
        return arr.astype(np.float32)
    return arr


class Tensor:
    """Node in the autodiff graph; holds data, grad and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_seq")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _op="leaf"):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad) and grad_enabled()
        self.grad = None
        self._parents = _parents if self.requires_grad else ()
        self._backward = None
        self._op = _op
        self._seq = next(_SEQ)

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, dtype={self.data.dtype})"

    # -- graph ------------------------------------------------------------
    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad on every reachable tensor that requires grad."""
        if self.data.size != 1:
            raise UsageError(
                f"backward() needs a scalar, got shape {self.shape}")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        self.grad = np.ones_like(self.data)
        for t in nodes:
            if t._backward is None or t.grad is None:
                continue
            for parent, g in zip(t._parents, t._backward(t.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other, self.dtype))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), -self)

    def __truediv__(self, other):
        return div(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ("trainable",)

    def __init__(self, data, dtype=None, trainable=True):
        super().__init__(data, requires_grad=True, dtype=dtype, _op="param")
        # parameters stay differentiable even when built under no_grad
        self.requires_grad = True
        self.trainable = trainable


def _wrap(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def _make(data, parents, op):
    req = grad_enabled() and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (), _op=op)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b, a.dtype)
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        ash, bsh = a.shape, b.shape

        def _bwd(g):
            return _unbroadcast(g, ash), _unbroadcast(g, bsh)

        out._backward = _bwd
    return out


def mul(a, b):
    a, b = _wrap(a), _wrap(b, a.dtype)
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        ad, bd = a.data, b.data

        def _bwd(g):
            return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

        out._backward = _bwd
    return out


def div(a, b):
    a, b = _wrap(a), _wrap(b, a.dtype)
    out = _make(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        ad, bd, od = a.data, b.data, out.data

        def _bwd(g):
            return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * od / bd, bd.shape)

        out._backward = _bwd
    return out


def scale(x, s):
    """Multiply a tensor by a scalar parameter (broadcast mul)."""
    return mul(x, s)


def relu(x):
    x = _wrap(x)
    out = _make(np.maximum(x.data, 0), (x,), "relu")
    if out.requires_grad:
        mask = x.data > 0

        def _bwd(g):
            return (g * mask,)

        out._backward = _bwd
    return out


def sigmoid(x):
    x = _wrap(x)
    y = expit(x.data)
    out = _make(y, (x,), "sigmoid")
    if out.requires_grad:
        def _bwd(g):
            return (g * y * (1 - y),)

        out._backward = _bwd
    return out


# -- reductions and shape ------------------------------------------------

def tensor_sum(x, axis=None, keepdims=False):
    x = _wrap(x)
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), "sum")
    if out.requires_grad:
        shape = x.shape

        def _bwd(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(g.dtype, copy=False),)
            gx = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gx, shape),)

        out._backward = _bwd
    return out


def tensor_mean(x, axis=None, keepdims=False):
    x = _wrap(x)
    n = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tensor_sum(x, axis, keepdims), 1.0 / float(n))


def reshape(x, shape):
    x = _wrap(x)
    out = _make(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:
        orig = x.shape

        def _bwd(g):
            return (g.reshape(orig),)

        out._backward = _bwd
    return out


def concat_channels(a, b):
    """Concatenate two rank-5 tensors along the channel axis."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 5 or b.ndim != 5:
        raise DimensionError(
            f"concat_channels needs rank-5 tensors, got {a.ndim} and {b.ndim}")
    for ax in (0, 2, 3, 4):
        if a.shape[ax] != b.shape[ax]:
            raise DimensionError(
                f"concat_channels mismatch on axis {ax}: {a.shape} vs {b.shape}")
    out = _make(np.concatenate([a.data, b.data], axis=1), (a, b), "concat")
    if out.requires_grad:
        ca = a.shape[1]

        def _bwd(g):
            return g[:, :ca], g[:, ca:]

        out._backward = _bwd
    return out


# -- pooling and resampling ----------------------------------------------

def max_pool3d(x):
    """2x2x2 max pooling, stride 2. Gradient goes to the argmax voxel of each
    block; ties resolve to the lowest linear index."""
    x = _wrap(x)
    B, C, D, H, W = x.shape
    for name, n in (("D", D), ("H", H), ("W", W)):
        if n % 2:
            raise DimensionError(f"max_pool3d needs even spatial dims, axis {name} has {n}")
    blocks = x.data.reshape(B, C, D // 2, 2, H // 2, 2, W // 2, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(B, C, D // 2, H // 2, W // 2, 8)
    idx = np.argmax(blocks, axis=-1)
    out = _make(np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], (x,), "max_pool3d")
    if out.requires_grad:
        def _bwd(g):
            gb = np.zeros((B, C, D // 2, H // 2, W // 2, 8), dtype=g.dtype)
            np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
            gb = gb.reshape(B, C, D // 2, H // 2, W // 2, 2, 2, 2)
            gb = gb.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(B, C, D, H, W)
            return (gb,)

        out._backward = _bwd
    return out


def global_avg_pool(x):
    """Spatial mean per channel, output (B, C, 1, 1, 1)."""
    x = _wrap(x)
    B, C, D, H, W = x.shape
    n = D * H * W
    out = _make(x.data.mean(axis=(2, 3, 4), keepdims=True), (x,), "global_avg_pool")
    if out.requires_grad:
        shape = x.shape

        def _bwd(g):
            return (np.broadcast_to(g / n, shape),)

        out._backward = _bwd
    return out


def _upsample_matrix(n_in, factor, dtype):
    """Dense (factor*n_in, n_in) linear interpolation matrix, half-pixel
    centers, edge-clamped."""
    n_out = n_in * factor
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    i0c = np.clip(i0, 0, n_in - 1)
    i1c = np.clip(i0 + 1, 0, n_in - 1)
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0c), (1.0 - frac).astype(dtype))
    np.add.at(m, (rows, i1c), frac.astype(dtype))
    return m


def trilinear_upsample(x, factor=2):
    """Separable trilinear upsampling by an integer factor (half-pixel
    convention). Implemented as one interpolation matrix per axis, so the
    backward pass is the exact transpose."""
    x = _wrap(x)
    if x.ndim != 5:
        raise DimensionError(f"trilinear_upsample needs rank-5 input, got {x.ndim}")
    mats = [_upsample_matrix(x.shape[ax], factor, x.dtype) for ax in (2, 3, 4)]

    def _apply(data, transpose):
        out = data
        for ax, m in zip((2, 3, 4), mats):
            mm = m.T if transpose else m
            out = np.moveaxis(np.tensordot(out, mm, axes=([ax], [1])), -1, ax)
        return out

    out = _make(_apply(x.data, False), (x,), "trilinear_upsample")
    if out.requires_grad:
        def _bwd(g):
            return (_apply(g, True),)

        out._backward = _bwd
    return out


# -- channel statistics (spatial attention inputs) -----------------------

def channel_mean(x):
    x = _wrap(x)
    C = x.shape[1]
    out = _make(x.data.mean(axis=1, keepdims=True), (x,), "channel_mean")
    if out.requires_grad:
        shape = x.shape

        def _bwd(g):
            return (np.broadcast_to(g / C, shape),)

        out._backward = _bwd
    return out


def channel_max(x):
    """Max over channels, keepdims; ties route the gradient to the lowest
    channel index."""
    x = _wrap(x)
    idx = np.argmax(x.data, axis=1)[:, None]
    out = _make(np.take_along_axis(x.data, idx, axis=1), (x,), "channel_max")
    if out.requires_grad:
        shape = x.shape

        def _bwd(g):
            gx = np.zeros(shape, dtype=g.dtype)
            np.put_along_axis(gx, idx, g, axis=1)
            return (gx,)

        out._backward = _bwd
    return out


# -- convolution ---------------------------------------------------------

def _triple(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise DimensionError(f"expected 3 values per axis, got {v!r}")
        return tuple(int(i) for i in v)
    return (int(v),) * 3


def conv3d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Grouped 3D convolution (cross-correlation) with zero padding.

    x: (B, Cin, D, H, W); weight: (Cout, Cin/groups, kd, kh, kw);
    bias: (Cout,) or None.
    """
    from . import backend

    x, weight = _wrap(x), _wrap(weight)
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5:
        raise DimensionError(f"conv3d input must be rank 5, got rank {x.ndim}")
    if weight.ndim != 5:
        raise DimensionError(f"conv3d weight must be rank 5, got rank {weight.ndim}")
    B, Cin, D, H, W = x.shape
    Cout, cpg, kd, kh, kw = weight.shape
    if Cin % groups or Cout % groups:
        raise DimensionError(
            f"channel counts must divide groups={groups}: Cin={Cin} (axis 1), Cout={Cout} (axis 0)")
    if cpg != Cin // groups:
        raise DimensionError(
            f"weight axis 1 is {cpg}, expected Cin/groups = {Cin // groups}")
    for ax, n, k, s, p in zip("DHW", (D, H, W), (kd, kh, kw), stride, padding):
        if n + 2 * p < k:
            raise DimensionError(f"kernel {k} exceeds padded input {n + 2 * p} on axis {ax}")
        if s < 1:
            raise DimensionError(f"stride must be >= 1 on axis {ax}")
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (Cout,):
            raise DimensionError(f"bias shape {bias.shape} != ({Cout},) (axis 0)")

    y = backend.conv3d_forward(x.data, weight.data, stride, padding, groups)
    if bias is not None:
        y = y + bias.data[None, :, None, None, None]
        parents = (x, weight, bias)
    else:
        parents = (x, weight)
    out = _make(y, parents, "conv3d")
    if out.requires_grad:
        xd, wd, x_shape, w_shape = x.data, weight.data, x.shape, weight.shape

        def _bwd(g):
            g = np.ascontiguousarray(g)
            gx = backend.conv3d_backward_x(g, wd, x_shape, stride, padding, groups)
            gw = backend.conv3d_backward_w(xd, g, w_shape, stride, padding, groups)
            if bias is not None:
                return gx, gw, g.sum(axis=(0, 2, 3, 4))
            return gx, gw

        out._backward = _bwd
    return out


# -- batch normalization -------------------------------------------------

class BNStats:
    """Running mean/variance buffers for one batch-norm layer."""

    __slots__ = ("mean", "var")

    def __init__(self, channels, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x, gamma, beta, stats, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over (B, D, H, W).

    Train mode normalizes with batch statistics (biased variance) and
    updates the running buffers (unbiased variance when the reduction count
    allows it). Eval mode normalizes with the running buffers.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.ndim != 5:
        raise DimensionError(f"batch_norm input must be rank 5, got rank {x.ndim}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(
            f"gamma/beta must have shape ({C},) to match channels (axis 1), "
            f"got {gamma.shape} and {beta.shape}")
    axes = (0, 2, 3, 4)
    n = x.size // C
    expand = (None, slice(None), None, None, None)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mean.astype(stats.mean.dtype)
        stats.var[...] = (1 - momentum) * stats.var + momentum * unbiased.astype(stats.var.dtype)
    else:
        mean = stats.mean.astype(x.dtype)
        var = stats.var.astype(x.dtype)
    ivar = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x.data - mean[expand]) * ivar[expand]
    out = _make(gamma.data[expand] * xhat + beta.data[expand], (x, gamma, beta), "batch_norm")
    if out.requires_grad:
        gd = gamma.data

        def _bwd(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gd[expand]
            if training:
                dx = (ivar[expand] / n) * (
                    n * dxhat
                    - dxhat.sum(axis=axes)[expand]
                    - xhat * (dxhat * xhat).sum(axis=axes)[expand])
            else:
                dx = dxhat * ivar[expand]
            return dx, dgamma, dbeta

        out._backward = _bwd
    return out


# -- fused losses --------------------------------------------------------

def bce_with_logits(logits, target):
    """Mean binary cross entropy on logits, evaluated in the stable form
    max(x,0) - x*t + log1p(exp(-|x|)). target is a plain array."""
    logits = _wrap(logits)
    t = np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DimensionError(f"target shape {t.shape} != logits shape {logits.shape}")
    x = logits.data
    elem = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = _make(elem.mean(dtype=x.dtype), (logits,), "bce_with_logits")
    if out.requires_grad:
        n = x.size

        def _bwd(g):
            return (g * (expit(x) - t) / n,)

        out._backward = _bwd
    return out


def first_nonfinite_op(loss: Tensor):
    """Walk the graph of `loss` in execution order; name the first op whose
    output contains NaN/Inf, or None when all values are finite."""
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    for t in sorted(nodes, key=lambda t: t._seq):
        if not np.all(np.isfinite(t.data)):
            return t._op
    return None
