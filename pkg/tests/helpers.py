"""Shared test utilities: finite-difference gradient checking and slow,
obviously-correct reference implementations that the fast paths are
measured against."""

import numpy as np

from waveseg import autodiff as ad


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(1.0, float(np.abs(a).max(initial=0.0)),
                float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / denom


def gradcheck(fn, tensors, eps=1e-5, atol=1e-3, max_entries=40, seed=0):
    """Central finite differences against reverse-mode gradients.

    `fn(*tensors)` must return a scalar Tensor. All inputs must be float64
    Tensors with requires_grad, or Parameters. Checks every entry up to
    `max_entries` per tensor, then a random sample. Returns the worst
    relative error; asserts it is within atol.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        assert t.dtype == np.float64, "gradcheck needs float64 inputs"
        t.grad = None
    out = fn(*tensors)
    assert out.size == 1, f"gradcheck target must be scalar, got {out.shape}"
    out.backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "no gradient reached an input"
        flat_idx = np.arange(t.size)
        if t.size > max_entries:
            flat_idx = rng.choice(t.size, size=max_entries, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, t.data.shape) if t.data.ndim else ()
            orig = t.data[idx]
            t.data[idx] = orig + eps
            hi = float(fn(*tensors).data)
            t.data[idx] = orig - eps
            lo = float(fn(*tensors).data)
            t.data[idx] = orig
            fd = (hi - lo) / (2 * eps)
            g = float(t.grad[idx])
            err = abs(g - fd) / max(1.0, abs(g), abs(fd))
            worst = max(worst, err)
    assert worst <= atol, f"gradient mismatch: worst rel err {worst:.3e} > {atol}"
    return worst


def random_weight_loss(rng, module=None):
    """Returns fn mapping a forward output to a scalar via a fixed random
    linear functional, so gradient errors cannot cancel in a plain sum."""
    cache = {}

    def lossify(out):
        key = out.shape
        if key not in cache:
            cache[key] = rng.standard_normal(out.shape)
        return ad.tensor_sum(ad.mul(out, ad.Tensor(cache[key])))

    return lossify


def conv3d_reference(x, w, padding, groups=1):
    """Direct 7-loop convolution in float64."""
    B, Cin, D, H, W = x.shape
    Cout, cpg, kd, kh, kw = w.shape
    pd, ph, pw = padding
    OD, OH, OW = D + 2 * pd - kd + 1, H + 2 * ph - kh + 1, W + 2 * pw - kw + 1
    xp = np.zeros((B, Cin, D + 2 * pd, H + 2 * ph, W + 2 * pw), np.float64)
    xp[:, :, pd:pd + D, ph:ph + H, pw:pw + W] = x
    y = np.zeros((B, Cout, OD, OH, OW), np.float64)
    cpg_out = Cout // groups
    for g in range(groups):
        for co in range(cpg_out):
            oc = g * cpg_out + co
            for ci in range(cpg):
                ic = g * cpg + ci
                for zd in range(kd):
                    for zh in range(kh):
                        for zw in range(kw):
                            y[:, oc] += (w[oc, ci, zd, zh, zw]
                                         * xp[:, ic, zd:zd + OD, zh:zh + OH,
                                              zw:zw + OW])
    return y


def largest_component_reference(mask, connectivity=26):
    """Flood fill every component; keep the largest, ties to the component
    whose first voxel comes earliest in row-major order."""
    mask = mask.astype(bool)
    if connectivity == 6:
        offs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    else:
        offs = [(dz, dy, dx) for dz in (-1, 0, 1) for dy in (-1, 0, 1)
                for dx in (-1, 0, 1) if (dz, dy, dx) != (0, 0, 0)]
    seen = np.zeros(mask.shape, bool)
    best = None
    best_size = 0
    D, H, W = mask.shape
    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x] or seen[z, y, x]:
                    continue
                comp = []
                stack = [(z, y, x)]
                seen[z, y, x] = True
                while stack:
                    cz, cy, cx = stack.pop()
                    comp.append((cz, cy, cx))
                    for dz, dy, dx in offs:
                        nz, ny, nx = cz + dz, cy + dy, cx + dx
                        if (0 <= nz < D and 0 <= ny < H and 0 <= nx < W
                                and mask[nz, ny, nx] and not seen[nz, ny, nx]):
                            seen[nz, ny, nx] = True
                            stack.append((nz, ny, nx))
                if len(comp) > best_size:
                    best_size = len(comp)
                    best = comp
    out = np.zeros(mask.shape, bool)
    if best:
        for v in best:
            out[v] = True
    return out


def slice_contours_reference(mask):
    mask = mask.astype(bool)
    D, H, W = mask.shape
    out = np.zeros(mask.shape, bool)
    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < H and 0 <= nx < W) or not mask[z, ny, nx]:
                        out[z, y, x] = True
                        break
    return out


def dilate_reference(mask, radius):
    mask = mask.astype(bool)
    D, H, W = mask.shape
    out = np.zeros(mask.shape, bool)
    fg = np.argwhere(mask)
    for z, y, x in fg:
        out[max(0, z - radius):z + radius + 1,
            max(0, y - radius):y + radius + 1,
            max(0, x - radius):x + radius + 1] = True
    return out


def boundary_reference(mask):
    mask = mask.astype(bool)
    D, H, W = mask.shape
    pts = []
    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    nz, ny, nx = z + dz, y + dy, x + dx
                    if (not (0 <= nz < D and 0 <= ny < H and 0 <= nx < W)
                            or not mask[nz, ny, nx]):
                        pts.append((z, y, x))
                        break
    return np.asarray(pts, dtype=np.int64).reshape(-1, 3)


def hd95_reference(pred, truth, spacing):
    """Exhaustive pairwise boundary distances, pooled 95th percentile."""
    sp = np.asarray(spacing, np.float64)
    P = boundary_reference(pred) * sp
    T = boundary_reference(truth) * sp
    if len(P) == 0 and len(T) == 0:
        return 0.0
    if len(P) == 0 or len(T) == 0:
        return float("nan")
    d = np.sqrt(((P[:, None, :] - T[None, :, :]) ** 2).sum(-1))
    pooled = np.concatenate([d.min(axis=1), d.min(axis=0)])
    return float(np.percentile(pooled, 95))


def rasterize_reference(segments, shape):
    """Scalar per-voxel point-in-capsule test, matching the vectorized
    rasterizer's arithmetic expression by expression."""
    D, H, W = shape
    out = np.zeros(shape, bool)
    for p0, p1, r0, r1 in segments:
        p0 = np.asarray(p0, np.float64)
        p1 = np.asarray(p1, np.float64)
        r0 = float(r0)
        r1 = float(r1)
        ddz, ddy, ddx = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
        dd = ddz * ddz + ddy * ddy + ddx * ddx
        for z in range(D):
            for y in range(H):
                for x in range(W):
                    dz, dy, dx = z - p0[0], y - p0[1], x - p0[2]
                    if dd == 0.0:
                        t = 0.0
                    else:
                        t = (dz * ddz + dy * ddy + dx * ddx) / dd
                        t = min(max(t, 0.0), 1.0)
                    cz = z - (p0[0] + t * ddz)
                    cy = y - (p0[1] + t * ddy)
                    cx = x - (p0[2] + t * ddx)
                    dist2 = cz * cz + cy * cy + cx * cx
                    r = r0 + t * (r1 - r0)
                    if dist2 <= r * r:
                        out[z, y, x] = True
    return out
