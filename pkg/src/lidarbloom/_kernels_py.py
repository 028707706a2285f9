"""Pure-NumPy implementations of the hot kernels.

Selected at import time by :mod:`lidarbloom.backend` when the compiled
extension is unavailable (or forced via LIDARBLOOM_BACKEND=python).

Every function here accumulates floating-point terms in exactly the same
order as the Cython twin in ``_fastpath.pyx`` (row-major over kernel cells,
ascending range bins), so the two backends produce bit-identical results.
"""

from __future__ import annotations

import numpy as np


def correlate2d_direct_band(img, ker, out, y0, y1):
    """Centered cross-correlation of ``img`` with ``ker`` for output rows
    [y0, y1); cells outside the image contribute zero."""
    H, W = img.shape
    kh, kw = ker.shape
    cy, cx = kh // 2, kw // 2
    band = out[y0:y1]
    band[:] = 0.0
    for j in range(kh):
        sy0, sy1 = y0 + j - cy, y1 + j - cy
        a0, a1 = max(sy0, 0), min(sy1, H)
        if a0 >= a1:
            continue
        d0 = a0 - sy0
        rows = img[a0:a1]
        dst = band[d0:d0 + (a1 - a0)]
        for i in range(kw):
            w = ker[j, i]
            sx = i - cx
            bx0, bx1 = max(0, -sx), min(W, W - sx)
            if bx0 >= bx1:
                continue
            dst[:, bx0:bx1] += w * rows[:, bx0 + sx:bx1 + sx]


def correlate_sep_h_band(img, h, out, y0, y1):
    """Horizontal 1D pass of a separable correlation for rows [y0, y1)."""
    H, W = img.shape
    kw = h.shape[0]
    cx = kw // 2
    band = out[y0:y1]
    band[:] = 0.0
    rows = img[y0:y1]
    for i in range(kw):
        w = h[i]
        sx = i - cx
        bx0, bx1 = max(0, -sx), min(W, W - sx)
        if bx0 >= bx1:
            continue
        band[:, bx0:bx1] += w * rows[:, bx0 + sx:bx1 + sx]


def correlate_sep_v_band(img, v, out, y0, y1):
    """Vertical 1D pass of a separable correlation for output rows [y0, y1)."""
    H, W = img.shape
    kh = v.shape[0]
    cy = kh // 2
    band = out[y0:y1]
    band[:] = 0.0
    for j in range(kh):
        w = v[j]
        sy0, sy1 = y0 + j - cy, y1 + j - cy
        a0, a1 = max(sy0, 0), min(sy1, H)
        if a0 >= a1:
            continue
        d0 = a0 - sy0
        band[d0:d0 + (a1 - a0)] += w * img[a0:a1]


def _group_offsets(counts):
    # per-group 0..n-1 sequences, concatenated in group order
    total = int(counts.sum())
    starts = np.cumsum(counts) - counts
    return np.arange(total, dtype=np.int64) - np.repeat(starts, counts)


def beam_accumulate(rho, lo, hi, ker, u0, v0, eta):
    """Accumulate one beam's kernel-weighted pixel intensities into the
    per-range-bin signal ``eta`` (in place).

    ``lo``/``hi`` are per-pixel inclusive bin intervals (int32, lo < 0 marks
    pixels that contribute nothing); each cell's contribution
    rho * ker / nbins is divided uniformly across its bins. np.add.at applies
    updates sequentially in element order, matching the loop order of the
    compiled backend and the brute-force oracle.
    """
    H, W = rho.shape
    kh, kw = ker.shape
    cy, cx = kh // 2, kw // 2
    j0, j1 = max(0, cy - v0), min(kh, H + cy - v0)
    i0, i1 = max(0, cx - u0), min(kw, W + cx - u0)
    if j0 >= j1 or i0 >= i1:
        return
    ys = slice(v0 + j0 - cy, v0 + j1 - cy)
    xs = slice(u0 + i0 - cx, u0 + i1 - cx)
    l = lo[ys, xs].ravel()
    valid = l >= 0
    if not np.any(valid):
        return
    l = l[valid].astype(np.int64)
    h = hi[ys, xs].ravel()[valid].astype(np.int64)
    contrib = (rho[ys, xs] * ker[j0:j1, i0:i1]).ravel()[valid]
    n = h - l + 1
    share = contrib / n
    if n.max() == 1:
        np.add.at(eta, l, share)
    else:
        idx = np.repeat(l, n) + _group_offsets(n)
        np.add.at(eta, idx, np.repeat(share, n))


def stack_update_band(conv, s, rho_min, strongest, eta_nearest, s_nearest, y0, y1):
    """Threshold/overwrite pass of the range-stacking loop for rows [y0, y1)."""
    c = conv[y0:y1]
    if strongest:
        m = (c >= rho_min) & (c > eta_nearest[y0:y1])
    else:
        m = c >= rho_min
    eta_nearest[y0:y1][m] = c[m]
    s_nearest[y0:y1][m] = s
