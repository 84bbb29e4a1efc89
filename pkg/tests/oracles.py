"""Reference computations that share no code with the package."""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, special


def molchan_kernel(h: float, t: float, s: float) -> float:
    """Volterra kernel of fBM with ``int_0^t K^2 = t^(2h)``, by direct quadrature of its integral form."""
    if h == 0.5:
        return 1.0
    with warnings.catch_warnings():
        # the algebraic weight absorbs the end-point singularity; QUADPACK still complains
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return _molchan(h, t, s)


def _molchan(h, t, s):
    if h < 0.5:
        c = math.sqrt(2 * h / ((1 - 2 * h) * special.beta(1 - 2 * h, h + 0.5)))
        inner = integrate.quad(lambda u: u ** (h - 1.5), s, t, weight="alg", wvar=(h - 0.5, 0.0),
                               epsabs=0, epsrel=1e-12)[0]
        return c * ((t / s) ** (h - 0.5) * (t - s) ** (h - 0.5) - (h - 0.5) * s ** (0.5 - h) * inner)
    c = math.sqrt(h * (2 * h - 1) / special.beta(2 - 2 * h, h - 0.5))
    inner = integrate.quad(lambda u: u ** (h - 0.5), s, t, weight="alg", wvar=(h - 1.5, 0.0),
                           epsabs=0, epsrel=1e-12)[0]
    return c * s ** (0.5 - h) * inner


def molchan_conditional_variance(h: float, u: float, t: float) -> float:
    """``int_u^t K(t, r)^2 dr`` with the end-point power factored into the quadrature weight."""
    a = 2 * h - 1
    g = lambda r: molchan_kernel(h, t, r) ** 2 / (t - r) ** a  # noqa: E731
    return integrate.quad(g, u, t * (1 - 1e-14), weight="alg", wvar=(0.0, a), epsabs=0, epsrel=1e-10,
                          limit=200)[0]


def fbm_cov_matrix(h: float, times: np.ndarray) -> np.ndarray:
    s, t = np.meshgrid(times, times, indexing="ij")
    return 0.5 * (s ** (2 * h) + t ** (2 * h) - np.abs(t - s) ** (2 * h))


def gaussian_conv_gaussian(y: float, a: float, b: float) -> float:
    """``(p_a * p_b)(y) = p_{a+b}(y)``."""
    v = a + b
    return math.exp(-y * y / (2 * v)) / math.sqrt(2 * math.pi * v)
