"""Overlap and surface-distance metrics for binary segmentations.

HD95 follows the pooled-percentile convention: collect boundary-to-boundary
nearest-neighbor distances in both directions into one set and take its
95th percentile (linear interpolation), in millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionError


@dataclass(frozen=True)
class SegMetrics:
    dsc: float
    sensitivity: float
    precision: float
    hd95_mm: float

    def as_row(self, model: str) -> dict:
        return {"model": model, "DSC": self.dsc, "Sensitivity": self.sensitivity,
                "Precision": self.precision, "HD95_mm": self.hd95_mm}


def _as_bool(mask: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 3:
        raise DimensionError(f"{name} must be 3D, got shape {m.shape}")
    return m.astype(bool)


def confusion_counts(pred: np.ndarray, truth: np.ndarray) -> Tuple[int, int, int]:
    p = _as_bool(pred, "pred")
    t = _as_bool(truth, "truth")
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    return tp, fp, fn


def dice_score(pred: np.ndarray, truth: np.ndarray) -> float:
    tp, fp, fn = confusion_counts(pred, truth)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def sensitivity(pred: np.ndarray, truth: np.ndarray) -> float:
    tp, _, fn = confusion_counts(pred, truth)
    return 1.0 if tp + fn == 0 else tp / (tp + fn)


def precision(pred: np.ndarray, truth: np.ndarray) -> float:
    tp, fp, _ = confusion_counts(pred, truth)
    return 1.0 if tp + fp == 0 else tp / (tp + fp)


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one of their six face neighbors
    background; positions beyond the volume edge count as background."""
    m = _as_bool(mask, "mask")
    if not m.any():
        return np.zeros((0, 3), dtype=np.int64)
    padded = np.pad(m, 1)
    interior = np.ones_like(m)
    for ax in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return np.argwhere(m & ~interior)


def hd95(pred: np.ndarray, truth: np.ndarray,
         spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> float:
    """95th percentile of pooled bidirectional boundary distances, in mm.

    Both masks empty gives 0.0; exactly one empty gives NaN (no surface to
    measure against).
    """
    p = _as_bool(pred, "pred")
    t = _as_bool(truth, "truth")
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    p_any, t_any = bool(p.any()), bool(t.any())
    if not p_any and not t_any:
        return 0.0
    if p_any != t_any:
        return float("nan")
    sp = np.asarray(spacing, dtype=np.float64)
    bp = boundary_voxels(p) * sp
    bt = boundary_voxels(t) * sp
    d_pt = cKDTree(bt).query(bp)[0]
    d_tp = cKDTree(bp).query(bt)[0]
    return float(np.percentile(np.concatenate([d_pt, d_tp]), 95))


def evaluate_pair(pred: np.ndarray, truth: np.ndarray,
                  spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> SegMetrics:
    tp, fp, fn = confusion_counts(pred, truth)
    denom = 2 * tp + fp + fn
    return SegMetrics(
        dsc=1.0 if denom == 0 else 2.0 * tp / denom,
        sensitivity=1.0 if tp + fn == 0 else tp / (tp + fn),
        precision=1.0 if tp + fp == 0 else tp / (tp + fp),
        hd95_mm=hd95(pred, truth, spacing),
    )
