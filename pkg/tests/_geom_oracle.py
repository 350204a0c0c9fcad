"""Exact symbol-error oracle from constellation geometry alone.

The probability of correct detection for symbol k is the integral of a
circular Gaussian over the Voronoi cell of point k. Cells are built by
half-plane clipping of a generous bounding box and integrated strip by
strip with Gauss-Legendre nodes, so no conditional-SEP formula from the
package is involved anywhere.
"""

import math

import numpy as np

_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


def _phi(z):
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _clip(poly, a, b, c):
    """Keep the part of polygon poly with a*x + b*y <= c."""
    out = []
    n = len(poly)
    for i in range(n):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % n]
        pv = a * px + b * py - c
        qv = a * qx + b * qy - c
        if pv <= 1e-12:
            out.append((px, py))
        if (pv <= 1e-12) != (qv <= 1e-12):
            t = pv / (pv - qv)
            out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def _cell_polygon(pts, k, half):
    """Voronoi cell of pts[k], in coordinates centered on pts[k]."""
    poly = [(-half, -half), (half, -half), (half, half), (-half, half)]
    for j in range(pts.shape[0]):
        if j == k:
            continue
        nx = pts[j, 0] - pts[k, 0]
        ny = pts[j, 1] - pts[k, 1]
        poly = _clip(poly, nx, ny, 0.5 * (nx * nx + ny * ny))
        if not poly:
            return poly
    return poly


def _cell_prob(poly, sigma):
    """Integral of N(0, sigma^2 I) over the convex polygon poly."""
    if len(poly) < 3:
        return 0.0
    xs = sorted({p[0] for p in poly})
    total = 0.0
    n = len(poly)
    for x0, x1 in zip(xs[:-1], xs[1:]):
        if x1 - x0 <= 1e-14:
            continue
        mid = 0.5 * (x1 + x0)
        hw = 0.5 * (x1 - x0)
        for gx, gw in zip(_GL_X, _GL_W):
            x = mid + hw * gx
            ys = []
            for i in range(n):
                px, py = poly[i]
                qx, qy = poly[(i + 1) % n]
                if (px - x) * (qx - x) <= 0.0 and px != qx:
                    t = (x - px) / (qx - px)
                    ys.append(py + t * (qy - py))
            if len(ys) < 2:
                continue
            lo, hi = min(ys), max(ys)
            total += gw * hw * _phi(x / sigma) / sigma \
                * (_cdf(hi / sigma) - _cdf(lo / sigma))
    return total


def exact_sep(points, lam):
    """Average SEP of a minimum-distance detector at symbol SNR lam.

    points must have unit average energy so that the per-dimension noise
    deviation is sqrt(1 / (2 lam)).
    """
    pts = np.asarray(points, dtype=float)
    sigma = math.sqrt(0.5 / lam)
    spread = float(np.abs(pts).max())
    half = spread + 12.0 * sigma
    correct = 0.0
    for k in range(pts.shape[0]):
        poly = _cell_polygon(pts, k, half)
        correct += _cell_prob(poly, sigma)
    return 1.0 - correct / pts.shape[0]
