"""Compare the compiled conv backend against the numpy fallback.

Run as `python -m waveseg.benchmark`. Shapes mirror the convolutions the
network actually issues at desk scale.
"""

from __future__ import annotations

import time

import numpy as np

from . import backend as bk
from .backend import numpy_kernels as nk

CASES = (
    # label,                        B, Cin, Cout, spatial, kernel, pad, groups
    ("stage-1 conv 8->8 @32^3",     2, 8, 8, 32, 3, 1, 1),
    ("decoder conv 16->8 @32^3",    2, 16, 8, 32, 3, 1, 1),
    ("stage-2 conv 16->16 @16^3",   2, 16, 16, 16, 3, 1, 1),
    ("grouped 64->64 g=8 @16^3",    2, 64, 64, 16, 3, 1, 8),
    ("spatial att 2->1 k=7 @32^3",  2, 2, 1, 32, 7, 3, 1),
    ("bottleneck 64->64 @4^3",      2, 64, 64, 4, 3, 1, 1),
)


def _flops(B, cin, cout, s, k, groups):
    return 2 * B * cout * s ** 3 * (cin // groups) * k ** 3


def _time(fn, budget=0.4):
    fn()
    best = float("inf")
    spent = 0.0
    while spent < budget:
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        best = min(best, dt)
        spent += dt
    return best


def run(report=print):
    if not bk.has_compiled():
        report("compiled backend unavailable; benchmarking numpy only")
    rng = np.random.default_rng(0)
    header = (f"{'case':30s} {'dir':4s} {'numpy ms':>9s} "
              f"{'C ms':>9s} {'speedup':>8s}")
    report(header)
    report("-" * len(header))
    for label, B, cin, cout, s, k, pad, g in CASES:
        x = rng.standard_normal((B, cin, s, s, s)).astype(np.float32)
        w = rng.standard_normal((cout, cin // g, k, k, k)).astype(np.float32)
        gy = rng.standard_normal(
            (B, cout, s + 2 * pad - k + 1, s + 2 * pad - k + 1,
             s + 2 * pad - k + 1)).astype(np.float32)
        runs = [
            ("fwd", lambda: nk.conv3d_forward(x, w, (1, 1, 1), (pad,) * 3, g),
             lambda: bk.conv3d_forward(x, w, (1, 1, 1), (pad,) * 3, g)),
            ("bwx", lambda: nk.conv3d_backward_x(gy, w, x.shape, (1, 1, 1), (pad,) * 3, g),
             lambda: bk.conv3d_backward_x(gy, w, x.shape, (1, 1, 1), (pad,) * 3, g)),
            ("bww", lambda: nk.conv3d_backward_w(x, gy, w.shape, (1, 1, 1), (pad,) * 3, g),
             lambda: bk.conv3d_backward_w(x, gy, w.shape, (1, 1, 1), (pad,) * 3, g)),
        ]
        for tag, np_fn, c_fn in runs:
            t_np = _time(np_fn)
            if bk.has_compiled():
                t_c = _time(c_fn)
                report(f"{label:30s} {tag:4s} {t_np * 1e3:9.2f} "
                       f"{t_c * 1e3:9.2f} {t_np / t_c:7.2f}x")
            else:
                report(f"{label:30s} {tag:4s} {t_np * 1e3:9.2f} {'-':>9s} {'-':>8s}")


if __name__ == "__main__":
    run()
