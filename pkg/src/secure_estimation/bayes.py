"""Posterior estimation costs and per-model optimal estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelSpace, _data, posterior, sample_stack
from .numerics import MonteCarloConfig, NumericalError, golden_section_min, map_blocks, substream
from .quadrature import importance_sample, refine


class ParameterDomainError(ValueError):
    """Closed-form parameters outside the region where the moments exist."""


class IterationLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SquaredError:
    def evaluate(self, x, u):
        return (np.asarray(x, float) - u) ** 2


@dataclass(frozen=True)
class AbsoluteError:
    def evaluate(self, x, u):
        return np.abs(np.asarray(x, float) - u)


CostFunction = SquaredError | AbsoluteError


@dataclass(frozen=True)
class ModelEstimate:
    hypothesis: int | None
    estimate: float
    posterior_cost: float


def posterior_cost(model: ModelSpace, i: int, u: float, Y, mc: MonteCarloConfig | None = None,
                   cost=SquaredError(), method: str = "quadrature") -> tuple[float, float]:
    """``E_i[C(X, u) | Y]`` with a standard error (zero on the quadrature path)."""
    if not math.isfinite(u):
        raise ValueError("u must be finite")
    d = _data(model, Y)
    if method == "mc" and not model.prior.degenerate:
        res = importance_sample(model.prior, model.families(i), d, mc or MonteCarloConfig())
        if res.evidence <= 0:
            raise NumericalError(f"evidence estimate vanished (ess={res.ess:.1f})")
        return res.expect(lambda x: cost.evaluate(x, u))
    post = posterior(model, i, d) if isinstance(cost, SquaredError) else _cost_grid(model, i, d)
    if not np.isfinite(post.log_evidence[0]):
        raise NumericalError("evidence vanished for this batch")
    if isinstance(cost, SquaredError):
        return float(post.var[0] + (post.mean[0] - u) ** 2), 0.0
    return float(post.expect(lambda x: cost.evaluate(x, u))[0]), 0.0


def _cost_grid(model: ModelSpace, i: int, d):
    return refine(model.prior, model.families(i), d, posterior(model, i, d, grid=True))


def _grid_minimise(post, k: int, cost, tol: float = 1e-10):
    x, w = post.nodes[k], np.exp(post.logw[k])
    # the minimiser of a posterior cost lies inside the bulk of the posterior
    cdf = np.cumsum(w)
    lo = float(x[min(np.searchsorted(cdf, 1e-9), x.size - 1)])
    hi = float(x[min(np.searchsorted(cdf, 1.0 - 1e-9), x.size - 1)])
    if hi <= lo:
        return lo, float(np.sum(w * cost.evaluate(x, lo)))
    f = lambda u: float(np.sum(w * cost.evaluate(x, u)))
    return golden_section_min(f, lo, hi, tol=tol * (hi - lo))


def optimal_estimates(model: ModelSpace, i: int, Y, cost=SquaredError(),
                      numerical: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Optimal estimates and minimal posterior costs for a data stack under model ``i``.

    With squared error and ``numerical=False`` these are the posterior mean and
    variance. Otherwise the posterior cost is minimised by golden-section
    search over a quadrature rule for the posterior.
    """
    d = _data(model, Y)
    if isinstance(cost, SquaredError) and not numerical:
        post = posterior(model, i, d)
        return post.mean, post.var
    post = posterior(model, i, d, grid=True) if isinstance(cost, SquaredError) else _cost_grid(model, i, d)
    est = np.empty(len(post.log_evidence))
    val = np.empty_like(est)
    for k in range(len(est)):
        est[k], val[k] = _grid_minimise(post, k, cost)
    return est, val


def optimal_model_estimate(model: ModelSpace, i: int, Y, cost=SquaredError(),
                           mc: MonteCarloConfig | None = None, numerical: bool = False) -> ModelEstimate:
    d = _data(model, Y)
    if d.ndim != 2:
        raise ValueError("expected a single (n, m) batch")
    est, val = optimal_estimates(model, i, d[None], cost, numerical)
    return ModelEstimate(i, float(est[0]), float(max(val[0], 0.0)))


def gaussian_invchisq_estimate(theta: float, zeta: float, phi: float, Y) -> ModelEstimate:
    """Posterior mean and variance of a Gaussian variance under a scaled inverse chi-squared prior.

    ``Y`` holds ``n`` scalar samples with known mean ``theta``.
    """
    y = np.asarray(Y, float).reshape(-1)
    n = y.size
    if zeta + n <= 4:
        raise ParameterDomainError(f"need zeta + n > 4, got {zeta} + {n}")
    ss = float(np.sum((y - theta) ** 2))
    s = zeta * phi + ss
    est = s / (zeta + n - 2.0)
    var = 2.0 * s * s / ((zeta + n - 2.0) ** 2 * (zeta + n - 4.0))
    return ModelEstimate(None, est, var)


@dataclass(frozen=True)
class Baseline:
    J0: float
    se: float
    estimator: Callable


def attack_free_baseline(model: ModelSpace, cost=SquaredError(),
                         mc: MonteCarloConfig | None = None) -> Baseline:
    """Bayes risk of the optimal estimator when no attack is present.

    The expectation over ``(X, Y) ~ f_0`` is taken by Monte Carlo with the
    posterior cost as a Rao-Blackwellised integrand.
    """
    mc = mc or MonteCarloConfig(20_000)

    def estimator(Y):
        return optimal_model_estimate(model, 0, Y, cost)

    if model.prior.degenerate:
        return Baseline(0.0, 0.0, estimator)

    def run(b, size):
        _, Y = sample_stack(model, 0, substream(mc.seed, 7, b), size)
        return optimal_estimates(model, 0, Y, cost)[1]

    vals = np.concatenate(map_blocks(run, mc.samples, mc.workers))
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return Baseline(float(vals.mean()), se, estimator)


def posterior_costs_at(model: ModelSpace, i: int, Y, u, cost=SquaredError()) -> np.ndarray:
    """Posterior cost of estimates ``u`` (one per data set) under model ``i``."""
    d = _data(model, Y)
    u = np.asarray(u, float)
    if isinstance(cost, SquaredError):
        post = posterior(model, i, d)
        return post.var + (post.mean - u) ** 2
    post = _cost_grid(model, i, d)
    return np.sum(np.exp(post.logw) * cost.evaluate(post.nodes, u[:, None]), axis=-1)
