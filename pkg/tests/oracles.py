"""Independent reference implementations used to check the package.

None of these import from ``mrxi``; they follow the textbook definitions and
favour clarity over speed.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import quad


def biot_savart_quad(a, b, w, scale=1.0):
    """B(w) = scale * int_0^1 (b - a) x (w - l(t)) / |w - l(t)|^3 dt with l(t) = a + t (b - a)."""
    a, b, w = (np.asarray(v, dtype=float) for v in (a, b, w))
    d = b - a

    def comp(i):
        def f(t):
            r = w - (a + t * d)
            return np.cross(d, r)[i] / np.linalg.norm(r) ** 3

        return quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)[0]

    return scale * np.array([comp(0), comp(1), comp(2)])


def polygon_field_quad(vertices, w, scale=1.0):
    v = np.asarray(vertices, dtype=float)
    return sum(biot_savart_quad(v[k], v[k + 1], w, scale) for k in range(len(v) - 1))


def dipole_field_explicit(y, eta, w):
    r = np.asarray(w, float) - np.asarray(y, float)
    d = np.linalg.norm(r)
    t = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            t[i, j] = 3.0 * r[i] * r[j] / d**5 - (1.0 if i == j else 0.0) / d**3
    return t @ np.asarray(eta, float)


def taut_string_tv1d(y, lam):
    """Exact minimiser of 1/2 ||x - y||^2 + lam * sum |x[i+1] - x[i]|.

    The cumulative sum of the solution is the shortest path (taut string)
    through the tube [S - lam, S + lam] around the cumulative sum S of y,
    pinned at both ends. The path is built greedily: from the current
    anchor, extend while a straight line still fits inside the tube; when it
    no longer does, bend at the tube boundary point that blocked it.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    s = np.concatenate([[0.0], np.cumsum(y)])
    lo = s - lam
    hi = s + lam
    lo[0] = hi[0] = 0.0
    lo[n] = hi[n] = s[n]
    r = np.empty(n + 1)
    r[0] = 0.0
    i0, r0 = 0, 0.0
    while i0 < n:
        smax_lo, jlo = -np.inf, i0
        smin_hi, jhi = np.inf, i0
        j = i0 + 1
        bent = False
        while j <= n:
            sl = (lo[j] - r0) / (j - i0)
            sh = (hi[j] - r0) / (j - i0)
            if sl > smin_hi:
                # the lower boundary crosses the tightest upper line: bend at jhi
                _fill(r, i0, r0, jhi, smin_hi)
                i0, r0 = jhi, hi[jhi]
                bent = True
                break
            if sh < smax_lo:
                _fill(r, i0, r0, jlo, smax_lo)
                i0, r0 = jlo, lo[jlo]
                bent = True
                break
            if sl >= smax_lo:
                smax_lo, jlo = sl, j
            if sh <= smin_hi:
                smin_hi, jhi = sh, j
            j += 1
        if not bent:
            slope = (s[n] - r0) / (n - i0)
            _fill(r, i0, r0, n, slope)
            i0 = n
    return np.diff(r)


def _fill(r, i0, r0, i1, slope):
    for k in range(i0, i1 + 1):
        r[k] = r0 + slope * (k - i0)


def tv_objective(K, g, c, alpha, shape=None):
    """1/2 ||K c - g||^2 + alpha * anisotropic TV with Neumann forward differences."""
    c = np.asarray(c, float)
    shape = shape or (c.size,)
    u = c.reshape(shape)
    tv = sum(np.abs(np.diff(u, axis=ax)).sum() for ax in range(u.ndim))
    r = K @ c - g
    return 0.5 * float(r @ r) + alpha * float(tv)


def lattice_minimum(K, g, alpha, upper, points=9, levels=40):
    """Coarse-to-fine exhaustive search of the TV objective over c >= 0.

    Starts with ``points`` values per coordinate on [0, upper] and repeatedly
    re-centres a lattice of half the spacing on the best point found.
    """
    n = K.shape[1]
    centre = np.full(n, upper / 2.0)
    half = upper / 2.0
    best_val, best = np.inf, centre
    for _ in range(levels):
        axes = [np.clip(np.linspace(c - half, c + half, points), 0.0, None) for c in centre]
        pts = np.array(list(itertools.product(*axes)))
        res = pts @ K.T - g
        vals = 0.5 * np.einsum("ij,ij->i", res, res) + alpha * np.abs(np.diff(pts, axis=1)).sum(axis=1)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best = float(vals[k]), pts[k]
        centre = best
        half *= 0.5
    return best_val, best


def ssim_naive(x, y, L, size=11, sigma=1.5):
    """SSIM by explicit loops over every fully contained window."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    g /= g.sum()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px = x[i : i + size, j : j + size]
            py = y[i : i + size, j : j + size]
            mx = float((g * px).sum())
            my = float((g * py).sum())
            vx = float((g * (px - mx) ** 2).sum())
            vy = float((g * (py - my) ** 2).sum())
            cxy = float((g * (px - mx) * (py - my)).sum())
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))
