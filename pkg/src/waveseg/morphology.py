"""Binary mask operations used to build the vessel-region prior.

The prior pipeline distills a myocardium mask down to the thin shell where
coronary vessels actually live: keep the largest connected blob, trace its
in-plane contour on every axial slice, then thicken the contour so nearby
vessel voxels fall inside it.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionError

_STRUCTS = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


def _check_mask(mask: np.ndarray) -> np.ndarray:
    if mask.ndim != 3:
        raise DimensionError(f"expected a 3D mask, got shape {mask.shape}")
    if mask.dtype == bool:
        return mask
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0, 1))):
        raise ConfigError(f"mask must be binary, found values {vals[:8]}")
    return mask.astype(bool)


def largest_component(mask: np.ndarray, connectivity: int = 26) -> np.ndarray:
    """Keep only the largest connected foreground component.

    Ties on size break toward the component containing the earliest voxel
    in row-major order, so the result is deterministic.
    """
    if connectivity not in _STRUCTS:
        raise ConfigError(f"connectivity must be 6 or 26, got {connectivity}")
    m = _check_mask(mask)
    labels, n = ndimage.label(m, structure=_STRUCTS[connectivity])
    if n == 0:
        return np.zeros_like(m)
    sizes = ndimage.sum_labels(m, labels, index=np.arange(1, n + 1))
    best = np.flatnonzero(sizes == sizes.max()) + 1
    if len(best) > 1:
        flat = labels.ravel()
        firsts = [np.flatnonzero(flat == lab)[0] for lab in best]
        keep = best[int(np.argmin(firsts))]
    else:
        keep = best[0]
    return labels == keep


def slice_contours(mask: np.ndarray) -> np.ndarray:
    """In-plane boundary voxels of the mask, computed per axial slice.

    A foreground voxel is on the contour when any of its four in-plane
    neighbors (or the volume border) is background.
    """
    m = _check_mask(mask)
    plus = ndimage.generate_binary_structure(2, 1)
    out = np.zeros_like(m)
    for d in range(m.shape[0]):
        sl = m[d]
        if not sl.any():
            continue
        interior = ndimage.binary_erosion(sl, structure=plus, border_value=0)
        out[d] = sl & ~interior
    return out


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilate with a cubic structuring element of side 2*radius + 1."""
    if radius < 0:
        raise ConfigError(f"dilation radius must be >= 0, got {radius}")
    m = _check_mask(mask)
    if radius == 0:
        return m.copy()
    cube = np.ones((2 * radius + 1,) * 3, dtype=bool)
    return ndimage.binary_dilation(m, structure=cube)


def build_prior(myocardium: np.ndarray, radius: int = 2,
                connectivity: int = 26) -> np.ndarray:
    """Full prior pipeline: largest component, slice contours, dilation.

    Returns a boolean volume marking the dilated myocardial shell, the
    region the network treats as plausible vessel territory.
    """
    comp = largest_component(myocardium, connectivity=connectivity)
    contour = slice_contours(comp)
    return dilate(contour, radius)
