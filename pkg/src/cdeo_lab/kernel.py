"""Gaussian densities, pdf ratios, the transition kernel and Black-Scholes put.

All heavy lifting is done in log space: ratios of Gaussian densities over a
support several standard deviations wide easily overflow a double.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# exp() overflows a double above this
LOG_MAX = 709.782712893384


class DomainError(ValueError):
    """Raised when an argument is outside the domain of a kernel function."""


@dataclass(frozen=True)
class GaussParams:
    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not self.variance > 0.0:
            raise DomainError(f"variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market in log-price coordinates.

    Parameters
    ----------
    r : float
        Interest rate, ``r >= 0``.
    sigma : float
        Volatility, ``sigma > 0``.
    T : float
        Anchor maturity, ``T > 0``.
    x0 : float
        Anchor log-price.
    """

    r: float
    sigma: float
    T: float
    x0: float

    def __post_init__(self) -> None:
        if not self.r >= 0.0:
            raise DomainError(f"r must be >= 0, got {self.r}")
        if not self.sigma > 0.0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if not self.T > 0.0:
            raise DomainError(f"T must be > 0, got {self.T}")
        if not math.isfinite(self.x0):
            raise DomainError(f"x0 must be finite, got {self.x0}")

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma

    @property
    def r_hat(self) -> float:
        return self.r - 0.5 * self.sigma2

    @property
    def r_tilde(self) -> float:
        return -self.r - 0.5 * self.sigma2

    @property
    def gamma(self) -> float:
        """Exponent ``2r/sigma^2`` of the driftless change of scale."""
        return 2.0 * self.r / self.sigma2

    def anchor(self) -> GaussParams:
        """Law of the log-price at the anchor maturity, started at x0."""
        return GaussParams(self.x0 + self.r_hat * self.T, self.sigma2 * self.T)


# ----------------------------------------------------------------- densities

def norm_cdf(z):
    """Standard normal cdf (Cephes ``ndtr``, accurate to ~1e-16 absolute)."""
    return ndtr(z)


def log_norm_pdf(mean, variance, y):
    y = np.asarray(y, dtype=float)
    return -0.5 * (y - mean) ** 2 / variance - 0.5 * np.log(variance) - LOG_SQRT_2PI


def norm_pdf(p: GaussParams, y):
    """Gaussian density with the given mean and variance."""
    out = np.exp(log_norm_pdf(p.mean, p.variance, y))
    return float(out) if np.ndim(out) == 0 else out


def log_pdf_ratio(p1: GaussParams, p2: GaussParams, y):
    """``log(phi(p1, y) / phi(p2, y))`` without forming either density.

    Uses the completed-square form for unequal variances, the exponential
    tilt form for equal ones, and the plain difference of quadratics when
    the variances are so close that the completed square cancels badly.
    """
    y = np.asarray(y, dtype=float)
    m1, s1 = p1.mean, p1.variance
    m2, s2 = p2.mean, p2.variance
    if s1 == s2:
        return y * (m1 - m2) / s1 + (m2 * m2 - m1 * m1) / (2.0 * s1)
    if abs(s1 - s2) < 1e-4 * max(s1, s2):
        return (-0.5 * (y - m1) ** 2 / s1 + 0.5 * (y - m2) ** 2 / s2
                + 0.5 * math.log(s2 / s1))
    d = s1 - s2
    A = (m2 * s1 - m1 * s2) / d
    B = s2 * s1 / (s2 - s1)
    return (0.5 * math.log(s2 / s1) - (y - A) ** 2 / (2.0 * B)
            - (m1 - m2) ** 2 / (2.0 * d))


def ratio_quadratic(p1: GaussParams, p2: GaussParams) -> tuple[float, float, float]:
    """Coefficients ``(a2, a1, a0)`` with ``log_pdf_ratio = a2 y^2 + a1 y + a0``."""
    a2 = -0.5 / p1.variance + 0.5 / p2.variance
    a1 = p1.mean / p1.variance - p2.mean / p2.variance
    a0 = (-0.5 * p1.mean ** 2 / p1.variance + 0.5 * p2.mean ** 2 / p2.variance
          + 0.5 * math.log(p2.variance / p1.variance))
    return a2, a1, a0


def pdf_ratio(p1: GaussParams, p2: GaussParams, y):
    """Ratio of two Gaussian densities.

    Returns ``inf`` (with a RuntimeWarning) where the ratio exceeds the
    double range; use :func:`log_pdf_ratio` when that matters.
    """
    lr = log_pdf_ratio(p1, p2, y)
    if np.any(lr > LOG_MAX):
        warnings.warn("pdf_ratio overflow, returning inf", RuntimeWarning, stacklevel=2)
    with np.errstate(over="ignore"):
        out = np.exp(lr)
    return float(out) if np.ndim(out) == 0 else out


# -------------------------------------------------------------------- kernel

def kernel_params(m: MarketParams, t: float, x) -> GaussParams:
    """Numerator law of the driftless kernel at elapsed time t."""
    if not t < m.T:
        raise DomainError(f"kernel needs t < T, got t={t}, T={m.T}")
    return GaussParams(x + m.r_tilde * (m.T - t), m.sigma2 * (m.T - t))


def kernel_kappa(m: MarketParams, t: float, x: float, y):
    """Driftless transition kernel.

    ``phi(x + r~(T-t), s^2(T-t), y) / phi(x0 + r~T, s^2 T, y)`` for ``t < T``.
    """
    if not t < m.T:
        raise DomainError(f"kernel needs t < T, got t={t}, T={m.T}")
    num = GaussParams(x + m.r_tilde * (m.T - t), m.sigma2 * (m.T - t))
    den = GaussParams(m.x0 + m.r_tilde * m.T, m.sigma2 * m.T)
    return pdf_ratio(num, den, y)


# ------------------------------------------------------------- put, closed form

def _d12(m: MarketParams, K: float, theta, x):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0):
        raise DomainError("Black-Scholes formulas need theta > 0")
    sq = m.sigma * np.sqrt(theta)
    d1 = (np.asarray(x, dtype=float) - K + (m.r + 0.5 * m.sigma2) * theta) / sq
    return d1, d1 - sq, sq


def bs_put_value(m: MarketParams, K: float, theta, x):
    """Black-Scholes put on ``e^x`` with log-strike ``K`` and maturity ``theta``.

    ``theta = 0`` returns the payoff.
    """
    theta_a = np.asarray(theta, dtype=float)
    x_a = np.asarray(x, dtype=float)
    if np.all(theta_a == 0.0):
        out = np.maximum(math.exp(K) - np.exp(x_a), 0.0)
    else:
        d1, d2, _ = _d12(m, K, theta_a, x_a)
        out = math.exp(K) * np.exp(-m.r * theta_a) * ndtr(-d2) - np.exp(x_a) * ndtr(-d1)
        # rounding can push deep out-of-the-money values slightly below zero
        out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PutDerivs:
    """Partial derivatives of the put value; D1 is d/dtheta, D2 is d/dx."""

    D1: float
    D2: float
    D12: float
    D22: float


def bs_put_derivs(m: MarketParams, K: float, theta, x) -> PutDerivs:
    d1, d2, sq = _d12(m, K, theta, x)
    theta = np.asarray(theta, dtype=float)
    ex = np.exp(np.asarray(x, dtype=float))
    pdf1 = np.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi)
    D1 = (ex * m.sigma / (2.0 * np.sqrt(theta)) * pdf1
          - m.r * math.exp(K) * np.exp(-m.r * theta) * ndtr(-d2))
    D2 = -ex * ndtr(-d1)
    D12 = ex * ((m.r + 0.5 * m.sigma2) * theta - (np.log(ex) - K)) / (2.0 * theta * sq) * pdf1
    D22 = D2 + ex * pdf1 / sq
    vals = [float(a) if np.ndim(a) == 0 else a for a in (D1, D2, D12, D22)]
    return PutDerivs(*vals)
