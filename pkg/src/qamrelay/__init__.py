"""ASER analysis of coherent QAM over a TAS-assisted dual-hop AF relay channel.

The package splits along the natural seams of the problem:

``specfun``
    Scalar special functions (Gaussian Q, Bessel K, Kummer and Gauss
    hypergeometrics, multinomial expansion coefficients) tuned for the
    parameter ranges the analysis actually visits.
``constellation``
    Constellation geometry and exact conditional symbol error rates for
    hexagonal, rectangular and cross QAM, plus their derivatives in SNR.
``analytic``
    End-to-end SNR distribution of the relay network and the two average
    SER evaluators built on it (closed form and adaptive quadrature).
``montecarlo``
    Channel-level simulators used to validate the analysis.
``cli``
    Sweep driver writing CSV, exposed as the ``qamrelay`` console script.
"""

from . import analytic, cli, constellation, montecarlo, specfun

__all__ = ["analytic", "cli", "constellation", "montecarlo", "specfun"]

__version__ = "0.1.0"
