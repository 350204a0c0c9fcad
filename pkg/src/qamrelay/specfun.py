"""Special functions for the relay ASER closed forms.

Everything here is real-valued float64. Evaluation strategies target the
parameter ranges the analysis actually produces: Gauss series arguments in
[0, 1), confluent arguments on the positive axis, Bessel orders up to a few
tens, and Gamma-heavy prefactors that the caller assembles in log space.
High-precision arithmetic is a test-oracle tool only, never a runtime mode.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import special as _sp

__all__ = [
    "ConvergenceError",
    "SeriesControl",
    "OmegaTable",
    "q_function",
    "log_gamma",
    "pochhammer",
    "double_factorial",
    "bessel_k",
    "hyp1f1",
    "hyp2f1",
    "multinomial_omega",
]

_SQRT2 = math.sqrt(2.0)


class ConvergenceError(ArithmeticError):
    """A truncated series failed to meet its tolerance within the term cap."""


@dataclass(frozen=True)
class SeriesControl:
    """Truncation policy for infinite series.

    A sum stops once the latest term contributes less than ``rel_tol``
    relative to the running total. Reaching ``max_terms`` first raises
    ConvergenceError; the cap is reported, never silently accepted.
    """

    rel_tol: float = 1e-13
    max_terms: int = 500

    def __post_init__(self) -> None:
        if not self.rel_tol > 0.0:
            raise ValueError("rel_tol must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be at least 1")


_DEFAULT = SeriesControl()


def q_function(x: float) -> float:
    """Gaussian tail probability Q(x) = erfc(x / sqrt 2) / 2.

    The erfc route keeps the far tail accurate where 1 - Phi(x) would
    round to zero (DLMF 7.11.2).
    """
    return 0.5 * math.erfc(float(x) / _SQRT2)


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0."""
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def pochhammer(a: float, n: int) -> float:
    """Rising factorial (a)_n evaluated as the explicit product.

    The product form stays exact at small integers and never routes through
    a Gamma-function pole.
    """
    if n != int(n) or n < 0:
        raise ValueError(f"pochhammer needs a non-negative integer n, got {n}")
    out = 1.0
    for k in range(int(n)):
        out *= a + k
    return out


def double_factorial(n: int) -> float:
    """(2k-1)!! for odd n >= -1, with (-1)!! = 1 by the empty-product rule."""
    if n != int(n) or n < -1 or n % 2 == 0:
        raise ValueError(f"double_factorial needs an odd integer >= -1, got {n}")
    out = 1
    for k in range(int(n), 1, -2):
        out *= k
    return float(out)


def bessel_k(order: float, x: float) -> float:
    """Modified Bessel function of the second kind K_order(x), x > 0.

    Symmetric in the sign of the order. Overflow (x near 0 with large
    |order|) is signaled rather than returned as inf.
    """
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"bessel_k requires x > 0, got {x}")
    val = float(_sp.kv(order, x))
    if math.isinf(val):
        raise OverflowError(f"K_nu overflows float64 at nu={order}, x={x}")
    return val


# ----------------------------------------------------------------------
# Confluent hypergeometric
# ----------------------------------------------------------------------

def hyp1f1(a: float, b: float, x: float, control: SeriesControl | None = None) -> float:
    """Kummer's confluent hypergeometric M(a, b, x).

    Branches: direct series for moderate positive x; the Kummer transform
    M(a,b,x) = e^x M(b-a, b, -x) for x < 0; and for large x the asymptotic
    expansion Gamma(b)/Gamma(a) e^x x^{a-b} sum_k (b-a)_k (1-a)_k / (k! x^k)
    (DLMF 13.7.2), whose neglected branch is O(e^-x) relative. For positive
    integer a the asymptotic series terminates, so it is taken as soon as
    the e^-x branch is below roundoff.
    """
    ctrl = control or _DEFAULT
    a = float(a)
    b = float(b)
    x = float(x)
    if b <= 0.0 and b == int(b):
        raise ValueError(f"hyp1f1 pole: b must not be a non-positive integer, got {b}")
    if x == 0.0:
        return 1.0
    if x < 0.0:
        return math.exp(x) * hyp1f1(b - a, b, -x, ctrl)
    terminating = a == int(a) and a >= 1.0
    if x > (40.0 if terminating else 400.0):
        return _kummer_asymptotic(a, b, x, ctrl)
    term = 1.0
    total = 1.0
    for k in range(ctrl.max_terms):
        term *= (a + k) * x / ((b + k) * (k + 1.0))
        total += term
        if abs(term) <= ctrl.rel_tol * abs(total):
            return total
    raise ConvergenceError(
        f"hyp1f1({a}, {b}, {x}) not converged in {ctrl.max_terms} terms"
    )


def _kummer_asymptotic(a: float, b: float, x: float, ctrl: SeriesControl) -> float:
    # ln prefactor first: e^x alone overflows before the product does not.
    ln_pref = x + (a - b) * math.log(x) + math.lgamma(b) - math.lgamma(a)
    term = 1.0
    total = 1.0
    prev = math.inf
    for k in range(ctrl.max_terms):
        term *= (b - a + k) * (1.0 - a + k) / ((k + 1.0) * x)
        if term == 0.0 or abs(term) >= prev:
            break  # series terminated, or passed its optimal truncation
        total += term
        prev = abs(term)
        if abs(term) <= ctrl.rel_tol * abs(total):
            break
    else:
        raise ConvergenceError(f"hyp1f1 asymptotic stalled at x={x}")
    if abs(term) > ctrl.rel_tol * abs(total) and term != 0.0:
        raise ConvergenceError(
            f"hyp1f1 asymptotic series floor {abs(term/total):.2e} above "
            f"rel_tol at a={a}, b={b}, x={x}"
        )
    ln_val = ln_pref + math.log(total)
    if ln_val > 709.0:
        raise OverflowError(f"hyp1f1({a}, {b}, {x}) exceeds float64 range")
    return math.exp(ln_val)


# ----------------------------------------------------------------------
# Gauss hypergeometric
# ----------------------------------------------------------------------

def hyp2f1(a: float, b: float, c: float, z: float,
           control: SeriesControl | None = None) -> float:
    """Gauss hypergeometric 2F1(a, b; c; z) on the real interval |z| < 1.

    z <= 0.5 runs the defining series; z < 0 first applies the Pfaff map
    z -> z/(z-1) (A&S 15.3.4). For 0.5 < z < 1 the z -> 1-z connection
    A&S 15.3.6 is used when c-a-b is not an integer; the degenerate integer
    case goes through the logarithmic connection (A&S 15.3.10/15.3.12) in
    its well-conditioned zone and otherwise falls back to the direct series,
    which still converges, just slowly.
    """
    ctrl = control or _DEFAULT
    a = float(a)
    b = float(b)
    c = float(c)
    z = float(z)
    if c <= 0.0 and c == int(c):
        raise ValueError(f"hyp2f1 pole: c must not be a non-positive integer, got {c}")
    if not abs(z) < 1.0:
        raise ValueError(f"hyp2f1 series diverges for |z| >= 1, got z={z}")
    if z == 0.0:
        return 1.0
    if z < 0.0:
        return (1.0 - z) ** (-a) * hyp2f1(a, c - b, c, z / (z - 1.0), ctrl)
    if z <= 0.5:
        return _gauss_series(a, b, c, z, ctrl)
    w = 1.0 - z
    s = c - a - b
    m = round(s)
    if abs(s - m) > 1e-8:
        return _connection_generic(a, b, c, z, w, s, ctrl)
    est = -m * z / w + 40.0 / max(-math.log(z), 1e-300)
    if (m <= 0 and a > 0.0 and b > 0.0 and a * b * w <= 16.0
            and est > 0.8 * ctrl.max_terms
            and not _near_nonpositive_integer(a + m)
            and not _near_nonpositive_integer(b + m)):
        arr = _ln_2f1_degenerate(
            np.array([a]), np.array([b]), np.array([int(-m)]), np.array([w])
        )
        ln_val = float(arr[0])
        if ln_val > 709.0:
            raise OverflowError(f"hyp2f1({a},{b},{c},{z}) exceeds float64 range")
        return math.exp(ln_val)
    # Integer-s fallback: the direct series converges on (0.5, 1), with cost
    # growing like 1/log(1/z); the cap keeps pathological arguments honest.
    return _gauss_series(a, b, c, z, ctrl)


def _gauss_series(a: float, b: float, c: float, z: float,
                  ctrl: SeriesControl) -> float:
    term = 1.0
    total = 1.0
    for k in range(ctrl.max_terms):
        term *= (a + k) * (b + k) * z / ((c + k) * (k + 1.0))
        total += term
        # geometric tail bound: once successive ratios sit below r < 1,
        # the remainder is at most |term| r / (1 - r)
        nxt = (a + k + 1) * (b + k + 1) * z / ((c + k + 1) * (k + 2.0))
        r = max(abs(nxt), abs(z))
        if r < 1.0 and abs(term) * r / (1.0 - r) <= ctrl.rel_tol * abs(total):
            return total
    raise ConvergenceError(
        f"hyp2f1({a}, {b}, {c}, {z}) not converged in {ctrl.max_terms} terms"
    )


def _signed_lgamma(x: float) -> tuple[float, float]:
    return float(_sp.gammaln(x)), float(_sp.gammasgn(x))


def _near_nonpositive_integer(x) -> bool:
    x = np.asarray(x, dtype=float)
    out = (x <= 1e-9) & (np.abs(x - np.rint(x)) <= 1e-9)
    return bool(out) if out.ndim == 0 else out


def _connection_generic(a: float, b: float, c: float, z: float, w: float,
                        s: float, ctrl: SeriesControl) -> float:
    # A&S 15.3.6. Gamma arguments may be negative reals; poles in the
    # denominators null their branch (1/Gamma -> 0).
    lc, sc = _signed_lgamma(c)
    ls, ss = _signed_lgamma(s)
    lns, sns = _signed_lgamma(-s)
    lca, sca = _signed_lgamma(c - a)
    lcb, scb = _signed_lgamma(c - b)
    la, sa = _signed_lgamma(a)
    lb, sb = _signed_lgamma(b)

    f1 = _gauss_series(a, b, 1.0 - s, w, ctrl)
    f2 = _gauss_series(c - a, c - b, 1.0 + s, w, ctrl)
    ln1 = lc + ls - lca - lcb + (math.log(abs(f1)) if f1 else -math.inf)
    sg1 = sc * ss * sca * scb * math.copysign(1.0, f1 if f1 else 1.0)
    ln2 = lc + lns - la - lb + s * math.log(w)
    ln2 += math.log(abs(f2)) if f2 else -math.inf
    sg2 = sc * sns * sa * sb * math.copysign(1.0, f2 if f2 else 1.0)

    top = max(ln1, ln2)
    if top == -math.inf:
        return 0.0
    val = sg1 * math.exp(ln1 - top) + sg2 * math.exp(ln2 - top)
    if abs(val) < 1e-10:
        # the two branches nearly cancel; the direct series, though slower,
        # has no cancellation at all
        return _gauss_series(a, b, c, z, ctrl)
    out = val * math.exp(top)
    return out


# ----------------------------------------------------------------------
# Batched positive-parameter 2F1 in log space (relay closed-form engine)
# ----------------------------------------------------------------------

def _ln_2f1_degenerate(a: np.ndarray, b: np.ndarray, m: np.ndarray,
                       w: np.ndarray, cap: int = 2000) -> np.ndarray:
    """ln 2F1(a, b; a+b-m; 1-w) for integer m >= 0 via A&S 15.3.10/15.3.12.

    Conditioned like exp(2 sqrt(a b w)): callers must keep a*b*w small
    (<= 16 loses under four digits). Vectorized per distinct m.
    """
    out = np.empty(a.shape, dtype=float)
    for mv in np.unique(m):
        sel = m == mv
        if mv == 0:
            out[sel] = _deg_m_zero(a[sel], b[sel], w[sel], cap)
        else:
            out[sel] = _deg_m_pos(a[sel], b[sel], int(mv), w[sel], cap)
    return out


def _deg_m_zero(a, b, w, cap):
    lnw = np.log(w)
    coef = np.ones_like(a)
    acc = np.zeros_like(a)
    for n in range(cap):
        brk = 2.0 * _sp.digamma(n + 1.0) - _sp.digamma(a + n) - _sp.digamma(b + n) - lnw
        acc += coef * brk
        ratio = (a + n) * (b + n) * w / ((n + 1.0) ** 2)
        coef *= ratio
        scale = np.abs(lnw) + np.abs(brk) + 5.0
        if n >= 2 and np.all(ratio < 1.0) and np.all(
            np.abs(coef) * scale <= 1e-17 * np.abs(acc) * (1.0 - ratio)
        ):
            break
    else:
        raise ConvergenceError("degenerate 2F1 connection (m=0) stalled")
    if np.any(acc <= 0.0):
        raise ConvergenceError("degenerate 2F1 connection lost all digits")
    return _sp.gammaln(a + b) - _sp.gammaln(a) - _sp.gammaln(b) + np.log(acc)


def _deg_m_pos(a, b, m, w, cap):
    c = a + b - m
    lnw = np.log(w)

    # finite part: sum_{n<m} (a-m)_n (b-m)_n / (n! (1-m)_n) w^n
    t = np.ones_like(a)
    s1 = np.ones_like(a)
    for n in range(m - 1):
        t *= (a - m + n) * (b - m + n) * w / ((n + 1.0) * (1.0 - m + n))
        s1 += t
    fp_ln = (
        _sp.gammaln(m) + _sp.gammaln(c) - _sp.gammaln(a) - _sp.gammaln(b)
        - m * lnw + np.log(np.abs(s1))
    )
    fp_sign = np.sign(s1)

    # logarithmic part: sum_n (a)_n (b)_n / (n! (n+m)!) w^n *
    #   [psi(n+1) + psi(n+m+1) - psi(a+n) - psi(b+n) - ln w]
    coef = np.full_like(a, 1.0 / math.factorial(m))
    acc = np.zeros_like(a)
    for n in range(cap):
        brk = (
            _sp.digamma(n + 1.0) + _sp.digamma(n + m + 1.0)
            - _sp.digamma(a + n) - _sp.digamma(b + n) - lnw
        )
        acc += coef * brk
        ratio = (a + n) * (b + n) * w / ((n + 1.0) * (n + m + 1.0))
        coef *= ratio
        scale = np.abs(lnw) + np.abs(brk) + 5.0
        if n >= 2 and np.all(ratio < 1.0) and np.all(
            np.abs(coef) * scale <= 1e-17 * (np.abs(acc) + 1e-300) * (1.0 - ratio)
        ):
            break
    else:
        raise ConvergenceError(f"degenerate 2F1 connection (m={m}) stalled")
    lgam_am, sgn_am = _sp.gammaln(a - m), _sp.gammasgn(a - m)
    lgam_bm, sgn_bm = _sp.gammaln(b - m), _sp.gammasgn(b - m)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp_ln = _sp.gammaln(c) - lgam_am - lgam_bm + np.log(np.abs(acc))
        lp_sign = ((-1.0) ** m) * sgn_am * sgn_bm * np.sign(acc)
    dead = ~np.isfinite(lp_ln)
    lp_ln = np.where(dead, -np.inf, lp_ln)
    lp_sign = np.where(dead, 0.0, lp_sign)

    top = np.maximum(fp_ln, lp_ln)
    val = fp_sign * np.exp(fp_ln - top) + lp_sign * np.exp(lp_ln - top)
    if np.any(val <= 0.0):
        raise ConvergenceError(f"degenerate 2F1 connection (m={m}) lost all digits")
    return top + np.log(val)


def _ln_series_pos_batch(a, b, c, z, cap=400_000):
    """ln of the Gauss series with all-positive terms, vectorized.

    Runs every lane simultaneously with periodic compaction of converged
    lanes and on-the-fly rescaling: the running sum may exceed float64 range
    long before its logarithm does.
    """
    n = a.size
    out = np.empty(n, dtype=float)
    if n == 0:
        return out
    idx = np.arange(n)
    t = np.ones(n)
    s = np.ones(n)
    off = np.zeros(n)
    aa, bb, cc, zz = (np.array(v, dtype=float, copy=True) for v in (a, b, c, z))
    k = 0
    chunk = 8
    r = np.zeros(n)
    while idx.size:
        stop = k + chunk
        while k < stop:
            r = (aa + k) * (bb + k) / ((cc + k) * (k + 1.0)) * zz
            t *= r
            s += t
            k += 1
        big = s > 1e270
        if big.any():
            sb = s[big]
            off[big] += np.log(sb)
            t[big] /= sb
            s[big] = 1.0
        rr = np.maximum(r, zz)
        done = (rr < 1.0) & (t * rr <= 5e-17 * s * (1.0 - rr))
        if done.any():
            out[idx[done]] = off[done] + np.log(s[done])
            keep = ~done
            idx = idx[keep]
            t = t[keep]
            s = s[keep]
            off = off[keep]
            aa = aa[keep]
            bb = bb[keep]
            cc = cc[keep]
            zz = zz[keep]
        if idx.size and k >= cap:
            raise ConvergenceError(
                f"batched 2F1 series exceeded {cap} terms "
                f"(z up to {zz.max():.9g})"
            )
        chunk = min(chunk * 2, 64)
    return out


def _ln_hyp2f1_positive(a, b, c, z, series_cap=400_000):
    """ln 2F1(a,b;c;z) for positive parameters and z in [0,1), batched.

    Lanes in the degenerate-connection sweet spot (c = a+b-m with integer
    m >= 0 and a*b*(1-z) <= 16) use the logarithmic connection; the rest run
    the direct all-positive series. Probe-calibrated: the connection is the
    only affordable route as z -> 1, and the direct series is the only
    accurate route everywhere else.
    """
    a, b, c, z = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (a, b, c, z))
    )
    a, b, c, z = (np.ascontiguousarray(v) for v in (a, b, c, z))
    out = np.empty(a.shape, dtype=float)
    w = 1.0 - z
    s = c - a - b
    m = np.rint(-s)
    # The direct series is perfectly conditioned, so it wins whenever
    # affordable. The log-connection takes over only where the series cost
    # explodes (z -> 1); there -ln w dominates the digamma brackets, which
    # keeps the connection's terms single-signed, and a*b*w bounds the
    # cancellation between its two halves.
    with np.errstate(divide="ignore"):
        est = np.maximum(s * (-1.0), 0.0) * z / np.maximum(w, 1e-300) \
            + 40.0 / np.maximum(-np.log(np.maximum(z, 1e-12)), 1e-300)
    deg = (
        (np.abs(s + m) <= 1e-9) & (m >= 0.0) & (a * b * w <= 16.0)
        & (est > 2500.0)
        & ~_near_nonpositive_integer(a - m) & ~_near_nonpositive_integer(b - m)
    )
    if deg.any():
        out[deg] = _ln_2f1_degenerate(a[deg], b[deg], m[deg].astype(int), w[deg])
    rest = ~deg
    if rest.any():
        out[rest] = _ln_series_pos_batch(a[rest], b[rest], c[rest], z[rest],
                                         cap=series_cap)
    return out


# ----------------------------------------------------------------------
# Multinomial expansion coefficients
# ----------------------------------------------------------------------

class OmegaTable:
    """Memo table of the coefficients of y^a in (sum_{q<c} y^q / q!)^b.

    Entries are exact rationals; the float view is taken at the edge.
    Reads and writes go through a lock so one table can serve many threads;
    values are pure functions of the key, so replayed computations are
    harmless.
    """

    def __init__(self) -> None:
        self._entries: dict[tuple[int, int, int], Fraction] = {}
        self._lock = threading.Lock()

    def exact(self, a: int, b: int, c: int) -> Fraction:
        if a < 0 or b < 0 or c < 1:
            raise ValueError(f"OmegaTable needs a >= 0, b >= 0, c >= 1, got {(a, b, c)}")
        key = (int(a), int(b), int(c))
        with self._lock:
            hit = self._entries.get(key)
        if hit is not None:
            return hit
        val = self._compute(*key)
        with self._lock:
            self._entries[key] = val
        return val

    def value(self, a: int, b: int, c: int) -> float:
        return float(self.exact(a, b, c))

    def _compute(self, a: int, b: int, c: int) -> Fraction:
        if b == 0:
            return Fraction(1 if a == 0 else 0)
        if a > b * (c - 1):
            return Fraction(0)
        # convolution of the b-th factor against the (b-1)-power table;
        # the index window is inclusive at both ends
        lo = max(0, a - (c - 1))
        hi = min(a, (b - 1) * (c - 1))
        total = Fraction(0)
        for i in range(lo, hi + 1):
            total += self.exact(i, b - 1, c) / math.factorial(a - i)
        return total


_OMEGA = OmegaTable()


def multinomial_omega(a: int, b: int, c: int) -> float:
    """Coefficient of y^a in (sum_{q=0}^{c-1} y^q / q!)^b, memoized."""
    return _OMEGA.value(a, b, c)
