"""Sliding-window patch planning and overlap-blended stitching.

Whole volumes rarely fit a fixed-size network input, so inference runs on
overlapping patches whose predictions are blended back together with
separable linear ramp weights. Every voxel's stitched value is a convex
combination of the patch predictions covering it.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionError


def _axis_starts(dim: int, patch: int, overlap: int) -> List[int]:
    stride = patch - overlap
    starts = list(range(0, dim - patch + 1, stride))
    last = dim - patch
    if starts[-1] != last:
        starts.append(last)
    return starts


def plan_patches(shape: Sequence[int], patch: Sequence[int] | int,
                 overlap: Sequence[int] | int) -> List[Tuple[int, int, int]]:
    """All patch start corners covering `shape`, ordered z-major.

    The final start on each axis is clamped so the last patch ends exactly
    at the volume edge; duplicate starts collapse.
    """
    patch = _triple(patch)
    overlap = _triple(overlap)
    if len(shape) != 3:
        raise DimensionError(f"expected 3D shape, got {shape}")
    for d, p, o in zip(shape, patch, overlap):
        if p < 1 or p > d:
            raise ConfigError(f"patch size {p} must be in [1, {d}] for dim {d}")
        if not 0 <= o < p:
            raise ConfigError(f"overlap {o} must be in [0, patch {p})")
    axes = [_axis_starts(d, p, o) for d, p, o in zip(shape, patch, overlap)]
    return [(z, y, x) for z in axes[0] for y in axes[1] for x in axes[2]]


def _triple(v) -> Tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ConfigError(f"expected int or 3 ints, got {v}")
    return t


def extract(volume: np.ndarray, start: Sequence[int],
            patch: Sequence[int] | int) -> np.ndarray:
    p = _triple(patch)
    z, y, x = start
    return volume[z:z + p[0], y:y + p[1], x:x + p[2]]


def _ramp(patch: int, overlap: int) -> np.ndarray:
    """Per-axis blend weight: 1 in the interior, tapering linearly toward
    the patch faces over `overlap` voxels, never reaching 0."""
    w = np.ones(patch, dtype=np.float64)
    for i in range(min(overlap, patch // 2)):
        w[i] = w[patch - 1 - i] = (i + 1) / (overlap + 1)
    return w


def stitch(shape: Sequence[int], patch: Sequence[int] | int,
           overlap: Sequence[int] | int,
           pieces: Sequence[Tuple[Tuple[int, int, int], np.ndarray]]) -> np.ndarray:
    """Blend patch predictions into a full volume.

    `pieces` pairs each start corner with its float prediction patch.
    Output is float32; each voxel is a weighted average of the predictions
    covering it, so values stay within the range of the inputs.
    """
    patch = _triple(patch)
    overlap = _triple(overlap)
    acc = np.zeros(tuple(shape), dtype=np.float64)
    wsum = np.zeros(tuple(shape), dtype=np.float64)
    w3 = (_ramp(patch[0], overlap[0])[:, None, None]
          * _ramp(patch[1], overlap[1])[None, :, None]
          * _ramp(patch[2], overlap[2])[None, None, :])
    for (z, y, x), pred in pieces:
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != patch:
            raise DimensionError(f"piece at {(z, y, x)} has shape {pred.shape}, "
                                 f"expected {patch}")
        acc[z:z + patch[0], y:y + patch[1], x:x + patch[2]] += pred * w3
        wsum[z:z + patch[0], y:y + patch[1], x:x + patch[2]] += w3
    if (wsum == 0).any():
        raise ConfigError("stitch pieces do not cover the full volume")
    return (acc / wsum).astype(np.float32)
