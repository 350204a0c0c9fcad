"""Constellation geometry, detection, and conditional symbol error rates.

Hexagonal layouts come from a deterministic minimum-energy search on the
triangular lattice; rectangular and cross layouts are closed-form grids.
All generated constellations are normalized to unit average symbol energy,
so an SNR value is always energy per symbol over N0.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special as _sp

from .specfun import SeriesControl, hyp1f1

__all__ = [
    "Constellation",
    "GeometryStats",
    "HqamSepParams",
    "RqamSepParams",
    "XqamSepParams",
    "SepParams",
    "generate",
    "stats",
    "detect",
    "sep_params",
    "sep_conditional",
    "sep_derivative",
]

_SQRT3 = math.sqrt(3.0)
_HQAM_ORDERS = (4, 8, 16, 32, 64)
_REL_DMIN = 1e-6  # relative slack when grouping "nearest" neighbors


@dataclass(frozen=True, eq=False)
class Constellation:
    """Immutable 2-D constellation with unit average energy.

    points is an (M, 2) float64 array in a fixed deterministic order; the
    rectangular fields (mi, mq, d_i, d_q, sigma) are None for layouts
    without an I/Q grid structure.
    """

    scheme: str
    order: int
    points: np.ndarray
    mi: int | None = None
    mq: int | None = None
    d_i: float | None = None
    d_q: float | None = None
    sigma: float | None = None

    def __post_init__(self) -> None:
        self.points.setflags(write=False)


@dataclass(frozen=True)
class GeometryStats:
    d_min: float
    avg_neighbors: float
    peak_energy: float
    avg_energy: float
    papr: float


@dataclass(frozen=True)
class HqamSepParams:
    """Hexagonal conditional-SEP parameters.

    m_avg: mean nearest-neighbor count; m_c: mean count of neighbor pairs
    60 degrees apart; alpha: d_min^2 / 2 at unit symbol energy.
    """

    m_avg: float
    m_c: float
    alpha: float


@dataclass(frozen=True)
class RqamSepParams:
    n1: float
    n2: float
    zeta: float
    rho: float


@dataclass(frozen=True)
class XqamSepParams:
    e1: float
    e2: float
    c: float
    order: int = 32


SepParams = Union[HqamSepParams, RqamSepParams, XqamSepParams]


# ----------------------------------------------------------------------
# Generation
# ----------------------------------------------------------------------

def generate(scheme: str, order: int | None = None, *, mi: int | None = None,
             mq: int | None = None, sigma: float = 1.0) -> Constellation:
    """Build a unit-energy constellation.

    scheme is one of "hqam", "rqam", "sqam", "xqam". Rectangular layouts
    take mi x mq level counts (powers of two) and a quadrature aspect
    sigma = d_q / d_i; "sqam" is the square special case and "xqam" the
    32-point cross. Point order is deterministic and bit-identical across
    calls.
    """
    key = str(scheme).lower()
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if key == "hqam":
        if order not in _HQAM_ORDERS:
            raise ValueError(
                f"unsupported hqam order {order}; supported orders are {_HQAM_ORDERS}"
            )
        pts = _hqam_points(int(order))
        return Constellation(scheme="hqam", order=int(order), points=pts)
    if key == "sqam":
        if order is None or order < 4:
            raise ValueError(f"sqam needs a square order >= 4, got {order}")
        side = math.isqrt(int(order))
        if side * side != order or not _is_pow2(side):
            raise ValueError(
                f"sqam order must be the square of a power of two, got {order}"
            )
        c = _rect(side, side, 1.0)
        return Constellation(scheme="sqam", order=int(order), points=c[0],
                             mi=side, mq=side, d_i=c[1], d_q=c[1], sigma=1.0)
    if key == "rqam":
        if mi is None or mq is None:
            raise ValueError("rqam needs mi and mq level counts")
        if not (_is_pow2(mi) and _is_pow2(mq)):
            raise ValueError(f"rqam level counts must be powers of two, got {mi}x{mq}")
        if order is not None and order != mi * mq:
            raise ValueError(f"order {order} inconsistent with {mi}x{mq} grid")
        pts, d_i = _rect(mi, mq, sigma)
        return Constellation(scheme="rqam", order=mi * mq, points=pts,
                             mi=mi, mq=mq, d_i=d_i, d_q=sigma * d_i, sigma=sigma)
    if key == "xqam":
        if order not in (None, 32):
            raise ValueError(f"the cross layout is 32-point only, got order {order}")
        return Constellation(scheme="xqam", order=32, points=_xqam32_points())
    raise ValueError(f"unknown scheme {scheme!r}; expected hqam, rqam, sqam or xqam")


def _is_pow2(n) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def _rect(mi: int, mq: int, sigma: float):
    # levels at odd multiples of d_i (d_q); unit mean energy fixes d_i
    d_i = math.sqrt(3.0 / ((mi * mi - 1) + sigma * sigma * (mq * mq - 1)))
    d_q = sigma * d_i
    xs = d_i * (2.0 * np.arange(mi) - (mi - 1))
    ys = d_q * (2.0 * np.arange(mq) - (mq - 1))
    pts = np.empty((mi * mq, 2))
    k = 0
    for y in ys:
        for x in xs:
            pts[k, 0] = x
            pts[k, 1] = y
            k += 1
    return pts, d_i


def _xqam32_points() -> np.ndarray:
    # 6x6 odd grid minus the four 2x2 corner blocks, 32 points, E = 20 u^2
    u = 1.0 / math.sqrt(20.0)
    lv = np.array([-5.0, -3.0, -1.0, 1.0, 3.0, 5.0])
    rows = []
    for y in lv:
        for x in lv:
            if abs(x) == 5.0 and abs(y) == 5.0:
                continue
            rows.append((u * x, u * y))
    return np.array(rows)


@functools.lru_cache(maxsize=None)
def _hqam_points_cached(m: int) -> bytes:
    pts = _hqam_search(m)
    return pts.tobytes()


def _hqam_points(m: int) -> np.ndarray:
    return np.frombuffer(_hqam_points_cached(m), dtype=float).reshape(m, 2).copy()


def _hqam_search(m: int) -> np.ndarray:
    """Deterministic minimum-energy m-point subset of the triangular lattice.

    Candidate centers sweep a fine grid over one fundamental cell; for each,
    the m lattice points nearest the center (ties broken on integer lattice
    coordinates) are centroid-shifted and scored by mean energy. Grid step
    and rounding make the search reproducible bit for bit.
    """
    r = math.isqrt(m) + 3
    aq, bq = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    aq = aq.ravel()
    bq = bq.ravel()
    px = aq + 0.5 * bq
    py = (_SQRT3 / 2.0) * bq

    best_energy = math.inf
    best_pts = None
    for ix in range(24):
        cx = ix / 24.0
        for iy in range(24):
            cy = iy / 24.0 * (_SQRT3 / 2.0)
            d2 = (px - cx) ** 2 + (py - cy) ** 2
            sel = np.lexsort((bq, aq, np.round(d2, 9)))[:m]
            sx = px[sel]
            sy = py[sel]
            sx = sx - sx.mean()
            sy = sy - sy.mean()
            energy = float(np.mean(sx * sx + sy * sy))
            if energy < best_energy - 1e-12:
                best_energy = energy
                best_pts = np.column_stack([sx, sy])
    scale = 1.0 / math.sqrt(best_energy)
    pts = best_pts * scale
    order = np.lexsort((np.round(pts[:, 0], 9), np.round(pts[:, 1], 9)))
    return np.ascontiguousarray(pts[order])


# ----------------------------------------------------------------------
# Geometry statistics and detection
# ----------------------------------------------------------------------

def _pairwise_d2(pts: np.ndarray) -> np.ndarray:
    diff = pts[:, None, :] - pts[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def stats(c: Constellation) -> GeometryStats:
    """Minimum distance, nearest-neighbor counts, and energy figures."""
    pts = np.asarray(c.points)
    d2 = _pairwise_d2(pts)
    np.fill_diagonal(d2, np.inf)
    d_min = math.sqrt(float(d2.min()))
    near = d2 <= (d_min * (1.0 + _REL_DMIN)) ** 2
    avg_neighbors = float(near.sum(axis=1).mean())
    energy = np.einsum("ij,ij->i", pts, pts)
    peak = float(energy.max())
    avg = float(energy.mean())
    return GeometryStats(d_min=d_min, avg_neighbors=avg_neighbors,
                         peak_energy=peak, avg_energy=avg, papr=peak / avg)


def detect(received, c: Constellation) -> int:
    """Index of the nearest constellation point; ties go to the lowest index."""
    if isinstance(received, complex):
        x, y = received.real, received.imag
    else:
        x, y = float(received[0]), float(received[1])
    pts = c.points
    d2 = (pts[:, 0] - x) ** 2 + (pts[:, 1] - y) ** 2
    return int(np.argmin(d2))


def _detect_batch(pts: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # chunked over symbols to bound the (chunk, M) distance matrix
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    step = 1 << 15
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        d2 = (x[lo:hi, None] - pts[None, :, 0]) ** 2 \
            + (y[lo:hi, None] - pts[None, :, 1]) ** 2
        out[lo:hi] = np.argmin(d2, axis=1)
    return out


# ----------------------------------------------------------------------
# Conditional SEP and its derivative
# ----------------------------------------------------------------------

def sep_params(c: Constellation) -> SepParams:
    """Scheme parameters feeding the conditional SEP expressions."""
    if c.scheme == "hqam":
        return _hqam_params(c)
    if c.scheme in ("rqam", "sqam"):
        mi, mq, sig = c.mi, c.mq, c.sigma
        n1 = 1.0 - 1.0 / mi
        n2 = 1.0 - 1.0 / mq
        zeta = math.sqrt(6.0 / ((mi * mi - 1) + (mq * mq - 1) * sig * sig))
        return RqamSepParams(n1=n1, n2=n2, zeta=zeta, rho=sig * zeta)
    if c.scheme == "xqam":
        m = 32.0
        e1 = 4.0 - 6.0 / math.sqrt(2.0 * m)
        e2 = 4.0 - 12.0 / math.sqrt(2.0 * m) + 12.0 / m
        return XqamSepParams(e1=e1, e2=e2, c=48.0 / (31.0 * m - 32.0), order=32)
    raise ValueError(f"no SEP parameterization for scheme {c.scheme!r}")


@functools.lru_cache(maxsize=None)
def _hqam_params_cached(order: int) -> HqamSepParams:
    c = generate("hqam", order)
    pts = np.asarray(c.points)
    d2 = _pairwise_d2(pts)
    np.fill_diagonal(d2, np.inf)
    dmin2 = float(d2.min())
    tol2 = dmin2 * (1.0 + _REL_DMIN) ** 2
    near = d2 <= tol2
    m_avg = float(near.sum(axis=1).mean())
    # pairs of nearest neighbors that are themselves a d_min apart subtend
    # 60 degrees at the center point
    pair_counts = np.zeros(order)
    for k in range(order):
        idx = np.flatnonzero(near[k])
        cnt = 0
        for s in range(idx.size):
            for t in range(s + 1, idx.size):
                if d2[idx[s], idx[t]] <= tol2:
                    cnt += 1
        pair_counts[k] = cnt
    m_c = float(pair_counts.mean())
    return HqamSepParams(m_avg=m_avg, m_c=m_c, alpha=dmin2 / 2.0)


def _hqam_params(c: Constellation) -> HqamSepParams:
    return _hqam_params_cached(c.order)


def _qf(x):
    return 0.5 * _sp.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def _as_lam(lam):
    arr = np.asarray(lam, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError("SNR must be non-negative")
    return arr


def sep_conditional(p: SepParams, lam):
    """Symbol error probability conditioned on instantaneous SNR lam.

    Accepts scalars or arrays; scalar in, float out.
    """
    lam_arr = _as_lam(lam)
    if isinstance(p, HqamSepParams):
        a = p.alpha * lam_arr
        q1 = _qf(np.sqrt(a))
        out = (p.m_avg * q1
               + (2.0 / 3.0) * p.m_c * _qf(np.sqrt(2.0 * a / 3.0)) ** 2
               - 2.0 * p.m_c * q1 * _qf(np.sqrt(a / 3.0)))
    elif isinstance(p, RqamSepParams):
        qz = _qf(p.zeta * np.sqrt(lam_arr))
        qr = _qf(p.rho * np.sqrt(lam_arr))
        out = 2.0 * (p.n1 * qz + p.n2 * qr - 2.0 * p.n1 * p.n2 * qz * qr)
    elif isinstance(p, XqamSepParams):
        cl = p.c * lam_arr
        out = (p.e1 * _qf(np.sqrt(2.0 * cl))
               + (4.0 / p.order) * _qf(2.0 * np.sqrt(cl))
               - p.e2 * _qf(np.sqrt(2.0 * cl)) ** 2)
    else:
        raise TypeError(f"unsupported SEP parameter type {type(p).__name__}")
    return float(out) if np.ndim(lam) == 0 else out


_1F1_CTRL = SeriesControl(rel_tol=1e-14, max_terms=600)
_LGAMMA_32 = math.lgamma(1.5)


def _ln_m1(x: float) -> float:
    # ln M(1, 3/2, x) for x >= 0; the asymptotic branch terminates for a = 1
    if x < 40.0:
        return math.log(hyp1f1(1.0, 1.5, x, _1F1_CTRL))
    return x - 0.5 * math.log(x) + _LGAMMA_32


def sep_derivative(p: SepParams, lam: float) -> float:
    """d(sep_conditional)/d lam at lam > 0.

    The confluent-hypergeometric pieces are assembled as
    exp(ln M(1,3/2,gx) - dx) so the e^{-dx} damping and the e^{+gx} growth
    never meet in linear arithmetic; every net exponent is negative.
    """
    lam = float(lam)
    if not lam > 0.0:
        raise ValueError(f"sep_derivative needs lam > 0, got {lam}")
    rt = math.sqrt(lam)
    if isinstance(p, HqamSepParams):
        al = p.alpha
        a1 = 0.5 * math.sqrt(al / (2.0 * math.pi)) * (p.m_c - p.m_avg)
        a2 = (p.m_c / 3.0) * math.sqrt(al / (3.0 * math.pi))
        a3 = (p.m_c / 2.0) * math.sqrt(al / (6.0 * math.pi))
        a4 = 2.0 * p.m_c * al / (9.0 * math.pi)
        a5 = p.m_c * al / (2.0 * _SQRT3 * math.pi)
        x = al * lam
        gauss = (a1 * math.exp(-x / 2.0) - a2 * math.exp(-x / 3.0)
                 + a3 * math.exp(-x / 6.0)) / rt
        kum = (a4 * math.exp(_ln_m1(x / 3.0) - 2.0 * x / 3.0)
               - a5 * (math.exp(_ln_m1(x / 2.0) - 2.0 * x / 3.0)
                       + math.exp(_ln_m1(x / 6.0) - 2.0 * x / 3.0)))
        return gauss + kum
    if isinstance(p, RqamSepParams):
        z2 = 0.5 * p.zeta * p.zeta
        r2 = 0.5 * p.rho * p.rho
        pref = 1.0 / math.sqrt(2.0 * math.pi * lam)
        gauss = (p.zeta * p.n1 * (p.n2 - 1.0) * math.exp(-z2 * lam)
                 + p.rho * p.n2 * (p.n1 - 1.0) * math.exp(-r2 * lam)) * pref
        cross = p.zeta * p.rho * p.n1 * p.n2 / math.pi
        if cross != 0.0:
            both = z2 + r2
            kum = -cross * (math.exp(_ln_m1(r2 * lam) - both * lam)
                            + math.exp(_ln_m1(z2 * lam) - both * lam))
        else:
            kum = 0.0
        return gauss + kum
    if isinstance(p, XqamSepParams):
        cl = p.c * lam
        t1 = 0.5 * (p.e2 - p.e1) * math.sqrt(p.c / math.pi) * math.exp(-cl) / rt
        t2 = -(4.0 / p.order) * math.sqrt(p.c / (2.0 * math.pi)) \
            * math.exp(-2.0 * cl) / rt
        t3 = -(p.e2 * p.c / math.pi) * math.exp(_ln_m1(cl) - 2.0 * cl)
        return t1 + t2 + t3
    raise TypeError(f"unsupported SEP parameter type {type(p).__name__}")
