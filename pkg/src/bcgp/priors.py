"""Univariate distributions used by the prior, in the exact parameterizations
the model is written in.

``Gamma(a, b)`` has mean ``a * b`` (``b`` is a scale).
``InverseGamma(a, b)`` has density proportional to ``x**(-a-1) exp(-1/(b x))``
and mean ``1 / ((a - 1) b)``; ``1/b`` plays the role of the usual scale.
``TruncatedBeta(alpha, beta, lo, hi)`` is the beta law carried affinely onto
``(lo, hi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_2PI = math.log(2.0 * math.pi)


def _as_out(arr):
    arr = np.asarray(arr, dtype=float)
    return float(arr) if arr.ndim == 0 else arr


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if not (np.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class Normal:
    mean: float
    var: float

    def __post_init__(self):
        _check_positive(var=self.var)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return _as_out(-0.5 * (LOG_2PI + math.log(self.var) + (x - self.mean) ** 2 / self.var))

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mean) / math.sqrt(self.var))

    def sample(self, rng, size=None):
        return rng.normal(self.mean, math.sqrt(self.var), size=size)

    @property
    def variance(self):
        return self.var


@dataclass(frozen=True)
class Gamma:
    a: float
    b: float

    def __post_init__(self):
        _check_positive(a=self.a, b=self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = ((self.a - 1.0) * np.log(x) - x / self.b
                   - special.gammaln(self.a) - self.a * math.log(self.b))
        return _as_out(np.where(x > 0, out, -np.inf))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, special.gammainc(self.a, np.maximum(x, 0) / self.b), 0.0)

    def sample(self, rng, size=None):
        return rng.gamma(self.a, self.b, size=size)

    @property
    def mean(self):
        return self.a * self.b

    @property
    def variance(self):
        return self.a * self.b ** 2


@dataclass(frozen=True)
class InverseGamma:
    a: float
    b: float

    def __post_init__(self):
        _check_positive(a=self.a, b=self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (-(self.a + 1.0) * np.log(x) - 1.0 / (self.b * x)
                   - special.gammaln(self.a) - self.a * math.log(self.b))
        return _as_out(np.where(x > 0, out, -np.inf))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x > 0, special.gammaincc(self.a, 1.0 / (self.b * np.maximum(x, 1e-300))), 0.0)

    def sample(self, rng, size=None):
        # 1/X ~ Gamma(shape a, scale b)
        return 1.0 / rng.gamma(self.a, self.b, size=size)

    @property
    def mean(self):
        if self.a <= 1:
            return math.inf
        return 1.0 / ((self.a - 1.0) * self.b)

    @property
    def variance(self):
        if self.a <= 2:
            return math.inf
        return self.mean ** 2 / (self.a - 2.0)


@dataclass(frozen=True)
class TruncatedBeta:
    alpha: float
    beta: float
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        _check_positive(alpha=self.alpha, beta=self.beta)
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got ({self.lo}, {self.hi})")

    def logpdf(self, x):
        return trbeta_logpdf(x, self.alpha, self.beta, self.lo, self.hi)

    def cdf(self, x):
        u = (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)
        return special.betainc(self.alpha, self.beta, np.clip(u, 0.0, 1.0))

    def sample(self, rng, size=None):
        u = rng.uniform(size=size)
        z = special.betaincinv(self.alpha, self.beta, u)
        # keep draws in the open interval
        z = np.clip(z, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        return self.lo + (self.hi - self.lo) * z

    @property
    def mean(self):
        return self.lo + self.alpha / (self.alpha + self.beta) * (self.hi - self.lo)

    @property
    def variance(self):
        s = self.alpha + self.beta
        return self.alpha * self.beta * (self.hi - self.lo) ** 2 / (s * s * (s + 1.0))


def Beta(alpha, beta):
    return TruncatedBeta(alpha, beta, 0.0, 1.0)


def trbeta_logpdf(x, alpha, beta=None, lo=0.0, hi=1.0):
    """Log density of the beta law on ``(lo, hi)``; ``-inf`` outside.

    ``alpha`` may instead be a :class:`TruncatedBeta`, in which case the
    remaining arguments are ignored.
    """
    if isinstance(alpha, TruncatedBeta):
        alpha, beta, lo, hi = alpha.alpha, alpha.beta, alpha.lo, alpha.hi
    x = np.asarray(x, dtype=float)
    inside = (x > lo) & (x < hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ((alpha - 1.0) * np.log(x - lo) + (beta - 1.0) * np.log(hi - x)
               - (alpha + beta - 1.0) * np.log(hi - lo) - special.betaln(alpha, beta))
    return _as_out(np.where(inside, out, -np.inf))


def trbeta_sample(dist: TruncatedBeta, rng, size=None):
    return dist.sample(rng, size)
