"""Single-level separable orthonormal 3D wavelet transform.

dwt3 decomposes (B, C, D, H, W) into (B, C, 8, D/2, H/2, W/2); the subband
index encodes the per-axis filter choice as k = 4*fd + 2*fh + fw with 0 =
low-pass, so k=0 is LLL and k=7 is HHH. Filters are two-tap orthonormal
pairs (Haar by default), which keeps the transform exactly invertible on
even-sized inputs with no boundary extension, and makes the adjoint of the
analysis transform equal to the synthesis transform (used by the backward
passes).

subbands_to_channels / channels_to_subbands define the one documented
packing between the rank-6 subband layout and a rank-5 (B, 8C, ...) layout:
subband-major, channel index k*C + c.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _make, _wrap
from .errors import DimensionError

_AXIS_NAMES = {2: "D", 3: "H", 4: "W"}


@dataclass(frozen=True)
class FilterPair:
    """Two-tap orthonormal analysis/synthesis filter bank."""

    analysis_lo: tuple
    analysis_hi: tuple
    synthesis_lo: tuple
    synthesis_hi: tuple

    def __post_init__(self):
        for name in ("analysis_lo", "analysis_hi", "synthesis_lo", "synthesis_hi"):
            taps = tuple(float(v) for v in getattr(self, name))
            if len(taps) != 2:
                raise DimensionError(
                    f"only two-tap filters are supported, {name} has {len(taps)} taps")
            object.__setattr__(self, name, taps)
        lo, hi = np.array(self.analysis_lo), np.array(self.analysis_hi)
        if not (np.isclose(lo @ lo, 1.0, atol=1e-10) and np.isclose(hi @ hi, 1.0, atol=1e-10)
                and np.isclose(lo @ hi, 0.0, atol=1e-10)):
            raise DimensionError("analysis filters must be orthonormal")
        # perfect-reconstruction probe on the two basis signals
        for x0, x1 in ((1.0, 0.0), (0.0, 1.0)):
            l = self.analysis_lo[0] * x0 + self.analysis_lo[1] * x1
            h = self.analysis_hi[0] * x0 + self.analysis_hi[1] * x1
            r0 = self.synthesis_lo[0] * l + self.synthesis_hi[0] * h
            r1 = self.synthesis_lo[1] * l + self.synthesis_hi[1] * h
            if abs(r0 - x0) > 1e-10 or abs(r1 - x1) > 1e-10:
                raise DimensionError("synthesis filters do not invert the analysis filters")

    @staticmethod
    def haar():
        s = 1.0 / np.sqrt(2.0)
        return FilterPair((s, s), (s, -s), (s, s), (s, -s))


HAAR = FilterPair.haar()


def _analysis_axis(x, f: FilterPair, axis: int):
    even = [slice(None)] * x.ndim
    odd = [slice(None)] * x.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    x0, x1 = x[tuple(even)], x[tuple(odd)]
    lo = f.analysis_lo[0] * x0 + f.analysis_lo[1] * x1
    hi = f.analysis_hi[0] * x0 + f.analysis_hi[1] * x1
    return lo, hi


def _synthesis_axis(lo, hi, f: FilterPair, axis: int):
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=lo.dtype)
    even = [slice(None)] * lo.ndim
    odd = [slice(None)] * lo.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    out[tuple(even)] = f.synthesis_lo[0] * lo + f.synthesis_hi[0] * hi
    out[tuple(odd)] = f.synthesis_lo[1] * lo + f.synthesis_hi[1] * hi
    return out


def dwt3_core(x: np.ndarray, f: FilterPair) -> np.ndarray:
    """(B, C, D, H, W) -> (B, C, 8, D/2, H/2, W/2), no autodiff."""
    if x.ndim != 5:
        raise DimensionError(f"dwt3 input must be rank 5, got rank {x.ndim}")
    for ax in (2, 3, 4):
        if x.shape[ax] % 2:
            raise DimensionError(
                f"dwt3 needs even spatial dims, axis {_AXIS_NAMES[ax]} has {x.shape[ax]}")
    parts = [x]
    for ax in (2, 3, 4):
        nxt = []
        for p in parts:
            lo, hi = _analysis_axis(p, f, ax)
            nxt += [lo, hi]
        parts = nxt
    # parts order after D,H,W passes is already k = 4*fd + 2*fh + fw
    return np.stack(parts, axis=2)


def iwt3_core(s: np.ndarray, f: FilterPair) -> np.ndarray:
    """(B, C, 8, d, h, w) -> (B, C, 2d, 2h, 2w), no autodiff."""
    if s.ndim != 6:
        raise DimensionError(f"iwt3 input must be rank 6, got rank {s.ndim}")
    if s.shape[2] != 8:
        raise DimensionError(f"subband axis must have size 8, got {s.shape[2]} (axis 2)")
    parts = [s[:, :, k] for k in range(8)]
    for ax in (4, 3, 2):  # undo W, then H, then D
        nxt = []
        for i in range(0, len(parts), 2):
            nxt.append(_synthesis_axis(parts[i], parts[i + 1], f, ax))
        parts = nxt
    return parts[0]


def dwt3(x, f: FilterPair = None):
    """Autodiff wavelet decomposition; the backward pass is iwt3_core
    (adjoint = inverse for orthonormal filters)."""
    f = HAAR if f is None else f
    x = _wrap(x)
    out = _make(dwt3_core(x.data, f), (x,), "dwt3")
    if out.requires_grad:
        def _bwd(g):
            return (iwt3_core(g, f),)

        out._backward = _bwd
    return out


def iwt3(s, f: FilterPair = None):
    """Autodiff wavelet reconstruction; backward pass is dwt3_core."""
    f = HAAR if f is None else f
    s = _wrap(s)
    out = _make(iwt3_core(s.data, f), (s,), "iwt3")
    if out.requires_grad:
        def _bwd(g):
            return (dwt3_core(g, f),)

        out._backward = _bwd
    return out


def subbands_to_channels(s):
    """(B, C, 8, d, h, w) -> (B, 8C, d, h, w), subband-major: output channel
    k*C + c holds subband k of channel c."""
    s = _wrap(s)
    if s.ndim != 6 or s.shape[2] != 8:
        raise DimensionError(f"expected (B, C, 8, d, h, w), got {s.shape}")
    B, C = s.shape[0], s.shape[1]
    sp = s.shape[3:]
    data = np.ascontiguousarray(s.data.transpose(0, 2, 1, 3, 4, 5)).reshape(B, 8 * C, *sp)
    out = _make(data, (s,), "subbands_to_channels")
    if out.requires_grad:
        def _bwd(g):
            return (np.ascontiguousarray(
                g.reshape(B, 8, C, *sp).transpose(0, 2, 1, 3, 4, 5)),)

        out._backward = _bwd
    return out


def channels_to_subbands(x):
    """Inverse packing of subbands_to_channels: (B, 8C, d, h, w) ->
    (B, C, 8, d, h, w)."""
    x = _wrap(x)
    if x.ndim != 5 or x.shape[1] % 8:
        raise DimensionError(
            f"expected (B, 8C, d, h, w) with channels divisible by 8, got {x.shape}")
    B, C8 = x.shape[0], x.shape[1]
    C = C8 // 8
    sp = x.shape[2:]
    data = np.ascontiguousarray(x.data.reshape(B, 8, C, *sp).transpose(0, 2, 1, 3, 4, 5))
    out = _make(data, (x,), "channels_to_subbands")
    if out.requires_grad:
        def _bwd(g):
            return (np.ascontiguousarray(
                g.transpose(0, 2, 1, 3, 4, 5)).reshape(B, C8, *sp),)

        out._backward = _bwd
    return out
