"""Per-coordinate observation families and scalar parameter priors.

A family describes one coordinate's conditional law ``g(y | x)`` for a scalar
parameter ``x``. Log-likelihoods over a column of ``n`` samples are evaluated
on a grid of parameter values, which is what the quadrature engine needs.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

_LOG_2PI = math.log(2.0 * math.pi)

_counter: ContextVar[list | None] = ContextVar("density_counter", default=None)


@contextmanager
def count_density_evaluations():
    """Count per-observation density evaluations made inside the block.

    Integrating a column of ``n`` observations for ``N`` data sets adds
    ``N * n`` regardless of how many quadrature nodes are used, so the count
    tracks how many likelihood factors an algorithm touches.
    """
    box = [0]
    token = _counter.set(box)
    try:
        yield box
    finally:
        _counter.reset(token)


def tally(k: int) -> None:
    box = _counter.get()
    if box is not None:
        box[0] += int(k)


def log_ndtr_diff(upper, lower):
    """``log(Phi(upper) - Phi(lower))`` for ``upper >= lower``, stable in both tails."""
    upper, lower = np.broadcast_arrays(np.asarray(upper, float), np.asarray(lower, float))
    flip = lower > 0
    hi = np.where(flip, -lower, upper)
    lo = np.where(flip, -upper, lower)
    lhi = special.log_ndtr(hi)
    llo = special.log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lhi + np.log1p(-np.exp(np.minimum(llo - lhi, 0.0)))


class Family:
    """Base class; subclasses are frozen dataclasses."""

    #: parameters ``(h, var, offset)`` when ``y | x ~ N(offset + h x, var)``
    def gaussian_part(self):
        return None

    def logpdf(self, y, x):
        raise NotImplementedError

    def loglik(self, ycol: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Sum of ``logpdf`` over rows of ``ycol`` (N, n) at nodes ``x`` (N, G)."""
        ycol = np.asarray(ycol, float)
        out = np.zeros(np.broadcast_shapes(x.shape, ycol.shape[:1] + (1,)))
        for r in range(ycol.shape[1]):
            out += self.logpdf(ycol[:, r, None], x)
        return out

    def location(self, x):
        """Location parameter for location families, else ``None``."""
        return None

    def standardized(self):
        """The density of ``y - location(x)``, independent of ``x``; ``None`` if not a location family."""
        return None


@dataclass(frozen=True)
class GaussianMeanShift(Family):
    """``y | x ~ N(offset + h x, var)``."""

    h: float = 1.0
    var: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("variance must be positive")

    def gaussian_part(self):
        return self.h, self.var, self.offset

    def location(self, x):
        return self.offset + self.h * np.asarray(x, float)

    def logpdf(self, y, x):
        z = np.asarray(y, float) - self.offset - self.h * np.asarray(x, float)
        return -0.5 * (_LOG_2PI + math.log(self.var)) - 0.5 * z * z / self.var

    def loglik(self, ycol, x):
        ycol = np.asarray(ycol, float)
        n = ycol.shape[1]
        d = ycol - self.offset
        s = d.sum(axis=1)[:, None]
        q = (d * d).sum(axis=1)[:, None]
        hx = self.h * x
        return (-0.5 * n * (_LOG_2PI + math.log(self.var))
                - 0.5 * (q - 2.0 * hx * s + n * hx * hx) / self.var)

    def sample(self, rng, x, size):
        return self.offset + self.h * np.asarray(x, float) + math.sqrt(self.var) * rng.standard_normal(size)

    def mean(self, x):
        return self.offset + self.h * np.asarray(x, float)

    def variance(self, x=None):
        return self.var

    def cdf(self, y, x):
        return special.ndtr((np.asarray(y, float) - self.mean(x)) / math.sqrt(self.var))

    def standardized(self):
        return GaussianMeanShift(0.0, self.var, 0.0)


@dataclass(frozen=True)
class GaussianConvolvedUniform(Family):
    """``y = offset + h x + N(0, var) + U[a, b]`` with independent noise terms."""

    h: float = 1.0
    var: float = 1.0
    a: float = -1.0
    b: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("variance must be positive")
        if not self.b > self.a:
            raise ValueError("need a < b")

    def location(self, x):
        return self.offset + self.h * np.asarray(x, float)

    def logpdf(self, y, x):
        c = np.asarray(y, float) - self.offset - self.h * np.asarray(x, float)
        s = math.sqrt(self.var)
        return log_ndtr_diff((c - self.a) / s, (c - self.b) / s) - math.log(self.b - self.a)

    def sample(self, rng, x, size):
        base = self.offset + self.h * np.asarray(x, float)
        return base + math.sqrt(self.var) * rng.standard_normal(size) + rng.uniform(self.a, self.b, size)

    def mean(self, x):
        return self.offset + self.h * np.asarray(x, float) + 0.5 * (self.a + self.b)

    def variance(self, x=None):
        return self.var + (self.b - self.a) ** 2 / 12.0

    def cdf(self, y, x):
        # E_U[Phi((y - c - U) / s)] via the antiderivative z Phi(z) + phi(z)
        s = math.sqrt(self.var)
        c = np.asarray(y, float) - self.offset - self.h * np.asarray(x, float)
        G = lambda z: z * special.ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        return s * (G((c - self.a) / s) - G((c - self.b) / s)) / (self.b - self.a)

    def standardized(self):
        return GaussianConvolvedUniform(0.0, self.var, self.a, self.b, 0.0)


@dataclass(frozen=True)
class GaussianVarianceOnly(Family):
    """``y | x ~ N(mean, scale * x)``: the parameter is a variance, so ``x > 0``."""

    mean_value: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def logpdf(self, y, x):
        v = self.scale * np.asarray(x, float)
        z = np.asarray(y, float) - self.mean_value
        with np.errstate(divide="ignore", invalid="ignore"):
            return -0.5 * (_LOG_2PI + np.log(v)) - 0.5 * z * z / v

    def loglik(self, ycol, x):
        ycol = np.asarray(ycol, float)
        n = ycol.shape[1]
        q = ((ycol - self.mean_value) ** 2).sum(axis=1)[:, None]
        v = self.scale * x
        with np.errstate(divide="ignore", invalid="ignore"):
            return -0.5 * n * (_LOG_2PI + np.log(v)) - 0.5 * q / v

    def sample(self, rng, x, size):
        return self.mean_value + np.sqrt(self.scale * np.asarray(x, float)) * rng.standard_normal(size)

    def mean(self, x):
        return np.full(np.shape(x), self.mean_value, float)

    def variance(self, x):
        return self.scale * np.asarray(x, float)

    def cdf(self, y, x):
        return special.ndtr((np.asarray(y, float) - self.mean_value) / np.sqrt(self.scale * np.asarray(x, float)))


# ---------------------------------------------------------------- priors


class Prior:
    positive = False
    degenerate = False

    def support(self):
        return -math.inf, math.inf


@dataclass(frozen=True)
class GaussianPrior(Prior):
    mean: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("prior variance must be positive")

    def logpdf(self, x):
        z = np.asarray(x, float) - self.mean
        return -0.5 * (_LOG_2PI + math.log(self.var)) - 0.5 * z * z / self.var

    def sample(self, rng, size):
        return self.mean + math.sqrt(self.var) * rng.standard_normal(size)

    def ppf(self, p):
        return self.mean + math.sqrt(self.var) * special.ndtri(p)

    def moments(self):
        return self.mean, self.var


@dataclass(frozen=True)
class UniformPrior(Prior):
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("need lo < hi")

    def support(self):
        return self.lo, self.hi

    def logpdf(self, x):
        x = np.asarray(x, float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)

    def ppf(self, p):
        return self.lo + (self.hi - self.lo) * np.asarray(p, float)

    def moments(self):
        return 0.5 * (self.lo + self.hi), (self.hi - self.lo) ** 2 / 12.0


@dataclass(frozen=True)
class InverseChiSquaredPrior(Prior):
    """Scaled inverse chi-squared with ``zeta`` degrees of freedom and scale ``phi``."""

    zeta: float = 4.0
    phi: float = 1.0
    positive = True

    def __post_init__(self):
        if not (self.zeta > 0 and self.phi > 0):
            raise ValueError("zeta and phi must be positive")

    def support(self):
        return 0.0, math.inf

    @property
    def _dist(self):
        return stats.invgamma(a=0.5 * self.zeta, scale=0.5 * self.zeta * self.phi)

    def logpdf(self, x):
        x = np.asarray(x, float)
        k = 0.5 * self.zeta
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (k * math.log(k * self.phi) - special.gammaln(k)
                   - (k + 1.0) * np.log(x) - k * self.phi / x)
        return np.where(x > 0, out, -np.inf)

    def sample(self, rng, size):
        return self.zeta * self.phi / rng.chisquare(self.zeta, size)

    def ppf(self, p):
        return self._dist.ppf(p)

    def moments(self):
        z = self.zeta
        mean = z * self.phi / (z - 2.0) if z > 2 else math.inf
        var = 2.0 * z * z * self.phi ** 2 / ((z - 2.0) ** 2 * (z - 4.0)) if z > 4 else math.inf
        return mean, var


@dataclass(frozen=True)
class PointMassPrior(Prior):
    """Degenerate prior; only meant for integration-free test instances."""

    x0: float = 0.0
    degenerate = True

    def support(self):
        return self.x0, self.x0

    def logpdf(self, x):
        return np.where(np.asarray(x, float) == self.x0, 0.0, -np.inf)

    def sample(self, rng, size):
        return np.full(size, self.x0, float)

    def ppf(self, p):
        return np.full(np.shape(p), self.x0, float)

    def moments(self):
        return self.x0, 0.0
