"""Attack-free and compromised data models.

Coordinates and scenarios use zero-based column indices. Hypothesis ``0`` is
the attack-free model and hypothesis ``i >= 1`` is ``model.scenarios[i - 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Sequence

import numpy as np

from .families import (  # noqa: F401  (re-exported)
    Family,
    GaussianConvolvedUniform,
    GaussianMeanShift,
    GaussianPrior,
    GaussianVarianceOnly,
    InverseChiSquaredPrior,
    PointMassPrior,
    Prior,
    UniformPrior,
    count_density_evaluations,
    tally,
)
from .numerics import MonteCarloConfig, substream
from .quadrature import Mixture, PosteriorBatch, importance_sample, integrate


class ContractError(ValueError):
    """Inputs violate a documented precondition."""


class NoAttackScenarios(ValueError):
    """A mixture over attack scenarios was requested but none carry mass."""


@dataclass(frozen=True)
class AttackScenario:
    coords: frozenset
    prior: float

    def __post_init__(self):
        object.__setattr__(self, "coords", frozenset(int(c) for c in self.coords))
        if not self.coords:
            raise ContractError("a scenario must compromise at least one coordinate")
        if self.prior < 0:
            raise ContractError("scenario prior must be nonnegative")


@dataclass(frozen=True)
class ObservationBatch:
    """``n`` samples (rows) of an ``m``-coordinate observation (columns)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, float)
        if d.ndim == 1:
            d = d[:, None]
        if d.ndim != 2:
            raise ContractError("observation batch must be a matrix")
        object.__setattr__(self, "data", d)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def m(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class ModelSpace:
    attack_free: tuple
    compromised: tuple
    prior: Prior
    n: int
    scenarios: tuple
    eps0: float
    K: int = 1

    def __post_init__(self):
        object.__setattr__(self, "attack_free", tuple(self.attack_free))
        object.__setattr__(self, "compromised", tuple(self.compromised))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        m = len(self.attack_free)
        if m == 0 or len(self.compromised) != m:
            raise ContractError("need one attack-free and one compromised family per coordinate")
        if self.n < 0:
            raise ContractError("n must be nonnegative")
        seen = set()
        for s in self.scenarios:
            if not s.coords <= set(range(m)):
                raise ContractError(f"scenario {sorted(s.coords)} outside 0..{m - 1}")
            if len(s.coords) > self.K:
                raise ContractError(f"scenario {sorted(s.coords)} exceeds K={self.K}")
            if s.coords in seen:
                raise ContractError("scenario coordinate sets must be distinct")
            seen.add(s.coords)
        if len(self.scenarios) > sum(math.comb(m, k) for k in range(1, self.K + 1)):
            raise ContractError("too many scenarios")
        total = self.eps0 + sum(s.prior for s in self.scenarios)
        if self.eps0 < 0 or abs(total - 1.0) > 1e-9:
            raise ContractError(f"hypothesis priors must sum to 1 (got {total})")

    @classmethod
    def build(cls, attack_free: Sequence[Family], compromised: Sequence[Family], prior: Prior,
              n: int, *, K: int = 1, eps0: float = 0.5,
              scenarios: Sequence[Sequence[int]] | None = None,
              scenario_priors: Sequence[float] | None = None) -> "ModelSpace":
        """Assemble a model, enumerating all subsets of size ``<= K`` unless given.

        Without ``scenario_priors`` the attack mass ``1 - eps0`` is split evenly.
        """
        m = len(attack_free)
        if scenarios is None:
            scenarios = [c for k in range(1, K + 1) for c in combinations(range(m), k)]
        if scenario_priors is None:
            scenario_priors = [(1.0 - eps0) / len(scenarios)] * len(scenarios)
        if len(scenario_priors) != len(scenarios):
            raise ContractError("one prior per scenario required")
        sc = tuple(AttackScenario(frozenset(c), float(p)) for c, p in zip(scenarios, scenario_priors))
        return cls(tuple(attack_free), tuple(compromised), prior, int(n), sc, float(eps0), int(K))

    @property
    def m(self) -> int:
        return len(self.attack_free)

    @property
    def T(self) -> int:
        return len(self.scenarios)

    @property
    def eps(self) -> np.ndarray:
        """Priors of hypotheses ``0..T``."""
        return np.array([self.eps0] + [s.prior for s in self.scenarios])

    @property
    def attack_weights(self) -> np.ndarray:
        """Scenario probabilities given an attack, indexed ``1..T`` at positions ``0..T-1``."""
        if self.eps0 >= 1.0:
            raise NoAttackScenarios("eps0 = 1 leaves no attack scenarios")
        return np.array([s.prior for s in self.scenarios]) / (1.0 - self.eps0)

    @property
    def membership(self) -> np.ndarray:
        """Boolean ``(T + 1, m)`` matrix; row ``i`` marks columns compromised under hypothesis ``i``."""
        M = np.zeros((self.T + 1, self.m), bool)
        for i, s in enumerate(self.scenarios, start=1):
            M[i, list(s.coords)] = True
        return M

    def families(self, i: int) -> tuple:
        if not 0 <= i <= self.T:
            raise ContractError(f"hypothesis index {i} outside 0..{self.T}")
        row = self.membership[i]
        return tuple(g1 if row[l] else g0 for l, (g0, g1) in enumerate(zip(self.attack_free, self.compromised)))

    def with_n(self, n: int) -> "ModelSpace":
        return replace(self, n=int(n))

    def with_priors(self, eps0: float, scenario_priors: Sequence[float]) -> "ModelSpace":
        sc = tuple(AttackScenario(s.coords, float(p)) for s, p in zip(self.scenarios, scenario_priors))
        return replace(self, eps0=float(eps0), scenarios=sc)


def _data(model: ModelSpace, Y) -> np.ndarray:
    d = Y.data if isinstance(Y, ObservationBatch) else np.asarray(Y, float)
    if d.ndim == 1 and model.m == 1:
        d = d[:, None]
    if d.shape[-1] != model.m or (d.ndim >= 2 and d.shape[-2] != model.n):
        raise ContractError(f"data shape {d.shape} does not match n={model.n}, m={model.m}")
    return d


def log_conditional_density(model: ModelSpace, i: int, Y, X: float) -> float:
    """``log f_i(Y | X)``: sum of per-coordinate log-densities."""
    d = _data(model, Y)
    if d.ndim != 2:
        raise ContractError("expected a single (n, m) batch")
    lo, hi = model.prior.support()
    if not lo <= X <= hi:
        raise ContractError(f"X={X} outside the prior support")
    tally(d.size)
    total = 0.0
    for l, f in enumerate(model.families(i)):
        total += float(np.sum(f.logpdf(d[:, l], X)))
    return total


def posterior(model: ModelSpace, i: int, Y, *, grid: bool = False) -> PosteriorBatch:
    """Quadrature/closed-form posterior of ``X`` under hypothesis ``i`` for a data stack."""
    d = _data(model, Y)
    return integrate(model.prior, model.families(i), d, grid=grid)


def log_marginal_likelihoods(model: ModelSpace, Y, hypotheses=None) -> np.ndarray:
    """``log f_i(Y)`` for a stack of data sets; shape ``(N, len(hypotheses))``."""
    hyps = range(model.T + 1) if hypotheses is None else hypotheses
    d = _data(model, Y)
    return np.stack([posterior(model, i, d).log_evidence for i in hyps], axis=-1)


def marginal_likelihood(model: ModelSpace, i: int, Y, mc: MonteCarloConfig | None = None,
                        method: str = "quadrature") -> tuple[float, float]:
    """``f_i(Y)`` with a standard error (zero for the deterministic paths).

    ``method="mc"`` uses self-normalised importance sampling with ``mc``.
    """
    d = _data(model, Y)
    if method == "mc" and not model.prior.degenerate:
        res = importance_sample(model.prior, model.families(i), d, mc or MonteCarloConfig())
        return res.evidence, res.evidence_se
    if method not in ("quadrature", "mc"):
        raise ValueError(f"unknown method {method!r}")
    return float(np.exp(posterior(model, i, d).log_evidence[0])), 0.0


def mixture_batch(model: ModelSpace, Y, *, grid: bool = False) -> PosteriorBatch:
    """Posterior/evidence of the attack mixture, factorised per coordinate.

    Only ``2 m`` coordinate likelihoods are evaluated per data set, whatever
    the number of scenarios.
    """
    w = model.attack_weights
    if model.T == 0:
        raise NoAttackScenarios("model has no attack scenarios")
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    mix = Mixture(model.compromised, model.membership[1:], logw)
    return integrate(model.prior, model.attack_free, _data(model, Y), mixture=mix, grid=grid)


def log_mixture_density(model: ModelSpace, Y) -> np.ndarray:
    return mixture_batch(model, Y).log_evidence


def mixture_density(model: ModelSpace, Y, mc: MonteCarloConfig | None = None) -> float:
    """``sum_i eps_i f_i(Y) / (1 - eps0)`` for a single batch."""
    if model.eps0 >= 1.0:
        raise NoAttackScenarios("eps0 = 1 leaves no attack scenarios")
    return float(np.exp(log_mixture_density(model, _data(model, Y))[0]))


def sample_stack(model: ModelSpace, i: int, rng: np.random.Generator, size: int,
                 X=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``size`` independent ``(X, Y)`` pairs under hypothesis ``i``.

    Returns ``X`` of shape ``(size,)`` and ``Y`` of shape ``(size, n, m)``.
    """
    x = model.prior.sample(rng, size) if X is None else np.broadcast_to(np.asarray(X, float), (size,)).copy()
    cols = [f.sample(rng, x[:, None], (size, model.n)) for f in model.families(i)]
    Y = np.stack(cols, axis=-1) if cols else np.zeros((size, model.n, 0))
    return x, Y


def sample(model: ModelSpace, i: int, rng_seed: int, draw_X: bool = True,
           X: float | None = None) -> tuple[float, ObservationBatch]:
    """One ``(X, Y)`` draw; ``X`` comes from the prior unless ``draw_X`` is false."""
    if not draw_X and X is None:
        raise ContractError("X must be supplied when draw_X is false")
    rng = substream(rng_seed)
    x, Y = sample_stack(model, i, rng, 1, X=None if draw_X else X)
    return float(x[0]), ObservationBatch(Y[0])
