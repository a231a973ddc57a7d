"""Synthetic cardiac phantoms: an ellipsoidal myocardium shell with thin
branching vessel tubes riding just outside its outer surface.

Geometry is generated as polyline centerlines with tapering radii, then
rasterized as rounded cones. `rasterize_tubes` keeps its arithmetic in a
form that a direct per-voxel reimplementation reproduces bit for bit, so
tests can check it against an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionError

Segment = Tuple[np.ndarray, np.ndarray, float, float]  # p0, p1, r0, r1


@dataclass(frozen=True)
class PhantomConfig:
    shape: Tuple[int, int, int] = (48, 48, 48)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    outer_frac: Tuple[float, float] = (0.30, 0.36)
    thickness_frac: Tuple[float, float] = (0.22, 0.32)
    center_jitter: float = 0.04
    surface_offset: float = 1.0
    n_trees: Tuple[int, int] = (1, 2)
    n_children: Tuple[int, int] = (1, 3)
    root_radius: Tuple[float, float] = (1.0, 1.4)
    child_radius_scale: float = 0.75
    radius_taper: float = 0.45
    min_radius: float = 0.55
    step: float = 1.0
    root_len: Tuple[int, int] = (26, 40)
    child_len: Tuple[int, int] = (10, 22)
    curve_sigma: float = 0.18
    polar_cap: float = 0.92
    mu_background: float = 0.22
    mu_myocardium: float = 0.55
    mu_vessel: float = 0.88
    noise_sigma: float = 0.04
    blur_sigma: float = 0.5
    vessel_frac_bounds: Tuple[float, float] = (0.0005, 0.03)
    max_attempts: int = 20

    def __post_init__(self):
        if len(self.shape) != 3 or any(d < 16 for d in self.shape):
            raise ConfigError(f"shape must be 3 dims of at least 16, got {self.shape}")
        if any(d % 16 != 0 for d in self.shape):
            raise ConfigError(f"shape dims must be divisible by 16, got {self.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ConfigError(f"spacing must be positive, got {self.spacing}")
        if not (self.mu_vessel > self.mu_myocardium > self.mu_background):
            raise ConfigError("intensity means must satisfy vessel > myocardium > background")


@dataclass
class VolumeRecord:
    """One phantom: image, ground-truth masks, and generation metadata.

    `centerlines` holds the polyline points each vessel tree was built
    from. They exist for geometric sanity measurements and are never
    serialized with the volume.
    """
    name: str
    image: np.ndarray
    vessels: np.ndarray
    myocardium: np.ndarray
    spacing: Tuple[float, float, float]
    centerlines: List[np.ndarray] = field(default_factory=list, repr=False)


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ValueError("zero-length direction")
    return v / n


def _project_to_ellipsoid(p: np.ndarray, center: np.ndarray,
                          axes: np.ndarray) -> np.ndarray:
    rel = p - center
    q = math.sqrt(float(((rel / axes) ** 2).sum()))
    if q < 1e-9:
        rel = np.array([axes[0], 0.0, 0.0])
        q = 1.0
    return center + rel / q


def _surface_normal(p: np.ndarray, center: np.ndarray, axes: np.ndarray) -> np.ndarray:
    return _unit((p - center) / axes ** 2)


def _grow_branch(rng: np.random.Generator, start: np.ndarray, direction: np.ndarray,
                 n_steps: int, r_start: float, cfg: PhantomConfig,
                 center: np.ndarray, axes_off: np.ndarray):
    """Walk along the offset ellipsoid surface, curving randomly in the
    tangent plane. Returns (points, radii)."""
    pts = [start.copy()]
    d = direction.copy()
    p = start.copy()
    for _ in range(n_steps):
        n = _surface_normal(p, center, axes_off)
        d = d - np.dot(d, n) * n
        d = _unit(d)
        theta = rng.normal(0.0, cfg.curve_sigma)
        b = _unit(np.cross(n, d))
        d = math.cos(theta) * d + math.sin(theta) * b
        nxt = _project_to_ellipsoid(p + cfg.step * d, center, axes_off)
        # keep tubes off the axial poles, where slice contours cannot follow
        if abs(nxt[0] - center[0]) / axes_off[0] > cfg.polar_cap:
            d[0] = -d[0]
            nxt = _project_to_ellipsoid(p + cfg.step * d, center, axes_off)
        p = nxt
        pts.append(p.copy())
    pts = np.asarray(pts)
    t = np.linspace(0.0, 1.0, len(pts))
    radii = np.maximum(r_start * (1.0 - cfg.radius_taper * t), cfg.min_radius)
    return pts, radii


def _tree_segments(rng: np.random.Generator, cfg: PhantomConfig,
                   center: np.ndarray, axes_off: np.ndarray):
    """One vessel tree: a root branch plus children sprouting from it."""
    v = _unit(rng.standard_normal(3))
    while abs(v[0]) > cfg.polar_cap:
        v = _unit(rng.standard_normal(3))
    start = center + axes_off * v
    n = _surface_normal(start, center, axes_off)
    d0 = rng.standard_normal(3)
    d0 = _unit(d0 - np.dot(d0, n) * n)
    root_len = int(rng.integers(cfg.root_len[0], cfg.root_len[1] + 1))
    r0 = float(rng.uniform(*cfg.root_radius))
    pts, radii = _grow_branch(rng, start, d0, root_len, r0, cfg, center, axes_off)

    branches = [(pts, radii)]
    n_child = int(rng.integers(cfg.n_children[0], cfg.n_children[1] + 1))
    for _ in range(n_child):
        idx = int(rng.integers(root_len // 4, 3 * root_len // 4 + 1))
        bp = pts[idx]
        nrm = _surface_normal(bp, center, axes_off)
        tang = _unit(pts[idx + 1] - pts[idx])
        side = _unit(np.cross(nrm, tang))
        ang = float(rng.uniform(0.5, 1.1)) * (1 if rng.random() < 0.5 else -1)
        cd = _unit(math.cos(ang) * tang + math.sin(ang) * side)
        clen = int(rng.integers(cfg.child_len[0], cfg.child_len[1] + 1))
        cr = max(float(radii[idx]) * cfg.child_radius_scale, cfg.min_radius)
        cpts, cradii = _grow_branch(rng, bp, cd, clen, cr, cfg, center, axes_off)
        branches.append((cpts, cradii))
    return branches


def rasterize_tubes(segments: Sequence[Segment],
                    shape: Tuple[int, int, int]) -> np.ndarray:
    """Rasterize rounded-cone segments into a boolean volume.

    A voxel at integer coordinates (z, y, x) is inside a segment when its
    distance to the closest centerline point is at most the radius
    interpolated at that point. All arithmetic is float64 and written so a
    scalar per-voxel loop computes the identical values.
    """
    if len(shape) != 3:
        raise DimensionError(f"expected 3D shape, got {shape}")
    mask = np.zeros(shape, dtype=bool)
    for p0, p1, r0, r1 in segments:
        p0 = np.asarray(p0, dtype=np.float64)
        p1 = np.asarray(p1, dtype=np.float64)
        r0 = float(r0)
        r1 = float(r1)
        rmax = max(r0, r1)
        lo = np.maximum(np.floor(np.minimum(p0, p1) - rmax - 1.0).astype(int), 0)
        hi = np.minimum(np.ceil(np.maximum(p0, p1) + rmax + 1.0).astype(int) + 1,
                        np.asarray(shape))
        if np.any(lo >= hi):
            continue
        zz, yy, xx = np.meshgrid(
            np.arange(lo[0], hi[0], dtype=np.float64),
            np.arange(lo[1], hi[1], dtype=np.float64),
            np.arange(lo[2], hi[2], dtype=np.float64),
            indexing="ij",
        )
        ddz, ddy, ddx = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
        dd = ddz * ddz + ddy * ddy + ddx * ddx
        dz, dy, dx = zz - p0[0], yy - p0[1], xx - p0[2]
        if dd == 0.0:
            t = np.zeros_like(dz)
        else:
            t = (dz * ddz + dy * ddy + dx * ddx) / dd
            t = np.clip(t, 0.0, 1.0)
        cz = zz - (p0[0] + t * ddz)
        cy = yy - (p0[1] + t * ddy)
        cx = xx - (p0[2] + t * ddx)
        dist2 = cz * cz + cy * cy + cx * cx
        r = r0 + t * (r1 - r0)
        inside = dist2 <= r * r
        mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= inside
    return mask


def branches_to_segments(branches) -> List[Segment]:
    segs: List[Segment] = []
    for pts, radii in branches:
        for i in range(len(pts) - 1):
            segs.append((pts[i], pts[i + 1], float(radii[i]), float(radii[i + 1])))
    return segs


def generate_phantom(seed_or_rng, cfg: PhantomConfig = PhantomConfig(),
                     name: str = "phantom") -> VolumeRecord:
    """Build one phantom volume. Deterministic for a given seed and config."""
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    dims = np.asarray(cfg.shape, dtype=np.float64)

    for _ in range(cfg.max_attempts):
        center = dims / 2.0 + rng.uniform(-1.0, 1.0, 3) * cfg.center_jitter * dims
        axes_out = rng.uniform(cfg.outer_frac[0], cfg.outer_frac[1], 3) * dims
        thickness = float(rng.uniform(*cfg.thickness_frac)) * float(axes_out.min())
        axes_in = axes_out - thickness
        axes_off = axes_out + cfg.surface_offset

        zz, yy, xx = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in cfg.shape),
                                 indexing="ij")
        q_out = (((zz - center[0]) / axes_out[0]) ** 2
                 + ((yy - center[1]) / axes_out[1]) ** 2
                 + ((xx - center[2]) / axes_out[2]) ** 2)
        q_in = (((zz - center[0]) / axes_in[0]) ** 2
                + ((yy - center[1]) / axes_in[1]) ** 2
                + ((xx - center[2]) / axes_in[2]) ** 2)
        heart = q_out <= 1.0
        myo = heart & (q_in >= 1.0)

        n_trees = int(rng.integers(cfg.n_trees[0], cfg.n_trees[1] + 1))
        branches = []
        for _ in range(n_trees):
            branches.extend(_tree_segments(rng, cfg, center, axes_off))
        vessels = rasterize_tubes(branches_to_segments(branches), cfg.shape)
        vessels &= ~heart  # tubes live strictly outside the outer wall

        frac = float(vessels.sum()) / vessels.size
        if cfg.vessel_frac_bounds[0] <= frac <= cfg.vessel_frac_bounds[1]:
            img = np.full(cfg.shape, cfg.mu_background, dtype=np.float64)
            img[myo] = cfg.mu_myocardium
            img[vessels] = cfg.mu_vessel
            if cfg.blur_sigma > 0:
                img = ndimage.gaussian_filter(img, cfg.blur_sigma)
            img = img + rng.normal(0.0, cfg.noise_sigma, cfg.shape)
            img = np.clip(img, 0.0, 1.0).astype(np.float32)
            return VolumeRecord(
                name=name,
                image=img,
                vessels=vessels.astype(np.uint8),
                myocardium=myo.astype(np.uint8),
                spacing=tuple(float(s) for s in cfg.spacing),
                centerlines=[pts for pts, _ in branches],
            )
    raise ConfigError(
        f"could not hit vessel fraction bounds {cfg.vessel_frac_bounds} "
        f"in {cfg.max_attempts} attempts; adjust tube geometry")


def split_counts(n: int) -> Tuple[int, int, int]:
    """Train/val/test sizes at a 7:1:2 ratio; leftovers go to train."""
    if n < 1:
        raise ConfigError(f"need at least one volume, got {n}")
    n_test = (2 * n) // 10
    n_val = n // 10
    return n - n_val - n_test, n_val, n_test


def make_dataset(n: int, seed: int, cfg: PhantomConfig = PhantomConfig()):
    """Generate n phantoms and split them 7:1:2 into train/val/test.

    Volume i always gets the same geometry for a given (seed, cfg),
    independent of n, so growing a dataset keeps earlier members stable.
    """
    n_train, n_val, n_test = split_counts(n)
    children = np.random.SeedSequence(seed).spawn(n)
    records = [
        generate_phantom(np.random.default_rng(children[i]), cfg, name=f"phantom_{i:03d}")
        for i in range(n)
    ]
    return {
        "train": records[:n_train],
        "val": records[n_train:n_train + n_val],
        "test": records[n_train + n_val:],
    }


def prior_coverage(vessels: np.ndarray, prior: np.ndarray) -> float:
    """Fraction of vessel voxels inside the prior region."""
    v = vessels.astype(bool)
    total = int(v.sum())
    if total == 0:
        return 1.0
    return float((v & prior.astype(bool)).sum()) / total
