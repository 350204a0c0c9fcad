import math
import threading
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qamrelay import specfun as sf
from qamrelay.specfun import (
    ConvergenceError,
    OmegaTable,
    SeriesControl,
    bessel_k,
    double_factorial,
    hyp1f1,
    hyp2f1,
    log_gamma,
    multinomial_omega,
    pochhammer,
    q_function,
)

mpmath.mp.dps = 40


# ---------------------------------------------------------------- q_function

def test_q_at_zero_is_half():
    assert q_function(0.0) == 0.5


def test_q_deep_tail_underflows_gracefully():
    # the true value ~ 1e-348 sits below float64 subnormals; what matters
    # is a clean tiny result, not inf or nan
    assert 0.0 <= q_function(40.0) < 1e-300
    assert q_function(26.0) > 0.0


def test_q_at_one():
    # 1 - Phi(1), standard normal table value
    assert q_function(1.0) == pytest.approx(0.15865525393145707, rel=1e-13)


def test_q_complement_sums_to_one():
    for x in np.linspace(-8.0, 8.0, 81):
        assert abs(q_function(x) + q_function(-x) - 1.0) <= 1e-12


@given(st.floats(-8, 8, allow_nan=False))
def test_q_monotone_decreasing(x):
    assert q_function(x + 0.125) < q_function(x)


# ---------------------------------------------------------------- log_gamma

def test_log_gamma_known_points():
    assert log_gamma(1.0) == 0.0
    assert log_gamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), rel=1e-15)


def test_log_gamma_against_quadrature():
    # direct numeric Gamma(7.3) = int_0^inf t^6.3 e^-t dt
    val, _ = integrate.quad(lambda t: t**6.3 * math.exp(-t), 0, 120, limit=200)
    assert log_gamma(7.3) == pytest.approx(math.log(val), rel=1e-10)


def test_log_gamma_factorials():
    for n in range(0, 21):
        assert math.exp(log_gamma(n + 1.0)) == pytest.approx(
            math.factorial(n), rel=1e-12
        )


def test_log_gamma_rejects_nonpositive():
    with pytest.raises(ValueError):
        log_gamma(0.0)
    with pytest.raises(ValueError):
        log_gamma(-2.5)


# ---------------------------------------------------------------- pochhammer

def test_pochhammer_values():
    assert pochhammer(3.0, 0) == 1.0
    assert pochhammer(1.0, 4) == 24.0
    assert pochhammer(1.5, 3) == pytest.approx(13.125, rel=1e-15)


def test_pochhammer_rejects_bad_n():
    with pytest.raises(ValueError):
        pochhammer(2.0, -1)


@given(st.floats(-10, 10, allow_nan=False), st.integers(0, 20))
def test_pochhammer_recurrence(a, n):
    assert pochhammer(a, n + 1) == pytest.approx(
        pochhammer(a, n) * (a + n), rel=1e-12, abs=1e-280
    )


# ---------------------------------------------------------------- double factorial

def test_double_factorial_values():
    assert double_factorial(-1) == 1.0
    assert double_factorial(5) == 15.0
    assert double_factorial(9) == 945.0


def test_double_factorial_rejects_even_and_below():
    with pytest.raises(ValueError):
        double_factorial(4)
    with pytest.raises(ValueError):
        double_factorial(-3)


# ---------------------------------------------------------------- bessel_k

def _k_integral(nu, x):
    # independent oracle: K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt
    val, _ = integrate.quad(
        lambda t: math.exp(-x * math.cosh(t)) * math.cosh(nu * t),
        0, 40, limit=400, epsabs=1e-300, epsrel=1e-12,
    )
    return val


def test_bessel_k_half_order_closed_form():
    assert bessel_k(0.5, 2.0) == pytest.approx(
        math.sqrt(math.pi / 4.0) * math.exp(-2.0), rel=1e-14
    )


def test_bessel_k_order_symmetry():
    assert bessel_k(1.7, 3.0) == pytest.approx(bessel_k(-1.7, 3.0), rel=1e-14)


def test_bessel_k_against_integral_oracle_spot():
    assert bessel_k(2.0, 1.3) == pytest.approx(_k_integral(2.0, 1.3), rel=1e-10)


def test_bessel_k_oracle_grid():
    # acceptance domain: orders used by the relay CDF, x spanning both tails
    for nu in (0.0, 0.5, 1.0, 2.0, 5.0):
        for x in (0.1, 0.3, 1.0, 3.0, 8.0, 20.0):
            assert bessel_k(nu, x) == pytest.approx(_k_integral(nu, x), rel=1e-9)


def test_bessel_k_domain_errors():
    with pytest.raises(ValueError):
        bessel_k(1.0, 0.0)
    with pytest.raises(ValueError):
        bessel_k(1.0, -2.0)
    with pytest.raises(OverflowError):
        bessel_k(5.0, 1e-70)


# ---------------------------------------------------------------- hyp1f1

def test_hyp1f1_at_zero():
    assert hyp1f1(1.0, 1.5, 0.0) == 1.0


def test_hyp1f1_against_brute_series():
    # 50 terms is far past convergence at x = 0.3
    term, acc = 1.0, 1.0
    for k in range(50):
        term *= (1.0 + k) * 0.3 / ((1.5 + k) * (k + 1.0))
        acc += term
    assert hyp1f1(1.0, 1.5, 0.3) == pytest.approx(acc, rel=1e-14)


def test_hyp1f1_erf_identity():
    # 1F1(1, 3/2, x^2) = sqrt(pi)/(2x) e^{x^2} erf(x); the two sides share
    # no code, the left is the series, the right is libm
    x = 0.8
    lhs = hyp1f1(1.0, 1.5, x * x)
    rhs = math.sqrt(math.pi) / (2.0 * x) * math.exp(x * x) * math.erf(x)
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_hyp1f1_against_mpmath_grid():
    for a, b in ((1.0, 1.5), (0.5, 1.5), (2.5, 4.0)):
        for x in (-300.0, -10.0, -0.7, 0.05, 1.0, 30.0, 250.0, 600.0):
            want = float(mpmath.hyp1f1(a, b, x))
            assert hyp1f1(a, b, x) == pytest.approx(want, rel=1e-8), (a, b, x)


def test_hyp1f1_kummer_transform_consistency():
    lhs = hyp1f1(0.5, 1.5, -4.0)
    rhs = math.exp(-4.0) * hyp1f1(1.0, 1.5, 4.0)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_hyp1f1_control_cap():
    with pytest.raises(ConvergenceError):
        hyp1f1(1.0, 1.5, 30.0, SeriesControl(rel_tol=1e-13, max_terms=5))


def test_hyp1f1_overflow_signaled():
    with pytest.raises(OverflowError):
        hyp1f1(1.0, 1.5, 800.0)


def test_hyp1f1_rejects_bad_b():
    with pytest.raises(ValueError):
        hyp1f1(1.0, 0.0, 0.4)
    with pytest.raises(ValueError):
        hyp1f1(1.0, -3.0, 0.4)


# ---------------------------------------------------------------- hyp2f1

def test_hyp2f1_at_zero():
    assert hyp2f1(0.7, 2.2, 3.3, 0.0) == 1.0


def test_hyp2f1_log_identity():
    # 2F1(1,1;2;z) = -ln(1-z)/z
    assert hyp2f1(1.0, 1.0, 2.0, 0.5) == pytest.approx(2.0 * math.log(2.0), rel=1e-12)


def test_hyp2f1_against_brute_series():
    # 300-term series at z = 0.4, summed in extended precision
    with mpmath.workdps(30):
        acc = mpmath.mpf(1)
        term = mpmath.mpf(1)
        for k in range(300):
            term *= (mpmath.mpf(2.5) + k) * (mpmath.mpf(1.5) + k) \
                / ((mpmath.mpf(3.0) + k) * (k + 1)) * mpmath.mpf(0.4)
            acc += term
        want = float(acc)
    assert hyp2f1(2.5, 1.5, 3.0, 0.4) == pytest.approx(want, rel=1e-12)


def test_hyp2f1_against_mpmath_grid():
    # covers direct series, Pfaff reflection, and both z -> 1-z connections
    cases = [
        (1.0, 3.0, 1.5, 0.93), (1.0, 3.0, 1.5, 0.55), (1.0, 3.0, 1.5, -0.8),
        (1.0, 7.0, 1.5, 0.75), (1.0, 12.5, 1.5, 0.6), (0.3, 0.7, 1.9, 0.97),
        (2.5, 1.5, 3.0, 0.9), (2.5, 1.5, 3.0, -0.99), (4.0, 2.0, 5.5, 0.82),
        (1.0, 1.0, 2.0, 0.999), (0.5, 0.5, 1.5, 0.88),
    ]
    for a, b, c, z in cases:
        want = float(mpmath.hyp2f1(a, b, c, z))
        assert hyp2f1(a, b, c, z) == pytest.approx(want, rel=1e-8), (a, b, c, z)


def test_hyp2f1_continuity_at_branch_seam():
    # triples chosen so the true function drifts by well under the
    # tolerance across the 2e-9 step; any branch jump would dominate
    for a, b, c in ((1.0, 3.0, 1.5), (0.3, 0.7, 1.9), (2.5, 1.5, 2.0)):
        lo = hyp2f1(a, b, c, 0.5 - 1e-9)
        hi = hyp2f1(a, b, c, 0.5 + 1e-9)
        assert hi == pytest.approx(lo, rel=1e-8)


def test_hyp2f1_rejects_arguments_outside_disc():
    with pytest.raises(ValueError):
        hyp2f1(1.0, 2.0, 3.0, 1.0)
    with pytest.raises(ValueError):
        hyp2f1(1.0, 2.0, 3.0, -1.2)


def test_hyp2f1_rejects_c_pole():
    with pytest.raises(ValueError):
        hyp2f1(1.0, 2.0, -1.0, 0.3)


def test_hyp2f1_cap_is_signaled():
    with pytest.raises(ConvergenceError):
        hyp2f1(1.0, 3.0, 1.5, 0.45, SeriesControl(rel_tol=1e-13, max_terms=3))


# ------------------------------------------------- batched log-space engine

def test_ln_hyp2f1_positive_matches_mpmath():
    # the moment-integral family: a = mu+nu, b = nu+1/2, c = mu+1/2,
    # argument sweeping toward the z -> 1 endpoint
    mus, nus, epss = [], [], []
    for nu in (0, 1, 2, 5, 9, 16):
        for dmu in (0.5, 1.5, 6.5, 35.5, 140.5, 430.5):
            for eps in (0.0, 0.1, 0.45, 0.62, 0.9, 0.99, 0.9995, 0.999999):
                mus.append(nu + dmu)
                nus.append(float(nu))
                epss.append(eps)
    mu = np.array(mus)
    nu = np.array(nus)
    eps = np.array(epss)
    a, b, c = mu + nu, nu + 0.5, mu + 0.5
    got = sf._ln_hyp2f1_positive(a, b, c, eps)
    for i in range(a.size):
        want = mpmath.log(mpmath.hyp2f1(a[i], b[i], c[i], eps[i]))
        assert got[i] == pytest.approx(float(want), rel=1e-10, abs=1e-12), (
            mu[i], nu[i], eps[i],
        )


def test_ln_hyp2f1_positive_generic_triples():
    rng = np.random.default_rng(7)
    a = rng.uniform(0.5, 40.0, 60)
    b = rng.uniform(0.5, 20.0, 60)
    c = a + b + rng.uniform(0.3, 4.0, 60)  # non-integer gap, series route
    z = rng.uniform(0.0, 0.95, 60)
    got = sf._ln_hyp2f1_positive(a, b, c, z)
    for i in range(a.size):
        want = mpmath.log(mpmath.hyp2f1(a[i], b[i], c[i], z[i]))
        assert got[i] == pytest.approx(float(want), rel=1e-10, abs=1e-12)


# ---------------------------------------------------------------- omega table

def _poly_coeff(a, b, c):
    # independent oracle: expand the truncated exponential power literally
    base = [Fraction(1, math.factorial(q)) for q in range(c)]
    poly = [Fraction(1)]
    for _ in range(b):
        nxt = [Fraction(0)] * (len(poly) + c - 1)
        for i, pi in enumerate(poly):
            if pi:
                for j, bj in enumerate(base):
                    nxt[i + j] += pi * bj
        poly = nxt
    return poly[a] if a < len(poly) else Fraction(0)


def test_omega_examples():
    assert multinomial_omega(0, 3, 4) == 1.0
    assert multinomial_omega(1, 5, 3) == 5.0
    assert multinomial_omega(2, 2, 2) == 1.0


def test_omega_base_cases():
    for c in range(2, 6):
        assert multinomial_omega(0, 0, c) == 1.0
        for b in range(1, 6):
            assert multinomial_omega(0, b, c) == 1.0
            assert multinomial_omega(1, b, c) == float(b)
    for a in range(0, 5):
        assert multinomial_omega(a, 1, 6) == pytest.approx(1.0 / math.factorial(a))


def test_omega_vanishes_past_degree():
    assert multinomial_omega(7, 2, 4) == 0.0
    assert multinomial_omega(3, 1, 3) == 0.0


def test_omega_full_small_domain_against_polynomial():
    # every valid triple with b, c <= 5
    table = OmegaTable()
    for b in range(0, 6):
        for c in range(1, 6):
            for a in range(0, b * (c - 1) + 1):
                assert table.exact(a, b, c) == _poly_coeff(a, b, c), (a, b, c)


def test_omega_rejects_bad_indices():
    with pytest.raises(ValueError):
        multinomial_omega(-1, 2, 3)
    with pytest.raises(ValueError):
        multinomial_omega(0, 2, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 18), st.integers(0, 7), st.integers(1, 7))
def test_omega_matches_polynomial_oracle(a, b, c):
    assert OmegaTable().exact(a, b, c) == _poly_coeff(a, b, c)


def test_omega_table_concurrent_reads():
    table = OmegaTable()
    errs = []

    def worker():
        try:
            for a in range(12):
                table.exact(a, 4, 4)
        except Exception as e:  # pragma: no cover
            errs.append(e)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errs
    assert table.exact(3, 4, 4) == _poly_coeff(3, 4, 4)


# ---------------------------------------------------------------- controls

def test_series_control_validation():
    with pytest.raises(ValueError):
        SeriesControl(rel_tol=0.0)
    with pytest.raises(ValueError):
        SeriesControl(max_terms=0)
