"""Coordinate-wise detection, isolation, reliability filtering and fusion.

The pipeline runs a global likelihood-ratio attack detector, isolates the
compromised coordinates, forms one estimate per coordinate from that
coordinate's data alone, drops estimates whose posterior cost exceeds a
calibrated threshold and fuses the rest. Its cost grows linearly in the
number of coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as sp_integrate

from .bayes import SquaredError, optimal_estimates
from .families import count_density_evaluations
from .model import (
    AttackScenario,
    ContractError,
    ModelSpace,
    _data,
    log_marginal_likelihoods,
    log_mixture_density,
    posterior,
    sample_stack,
)
from .numerics import (
    MonteCarloConfig,
    NumericalError,
    empirical_quantile,
    golden_section_min,
    map_blocks,
    substream,
)


LLR_TIE_TOL = 1e-9


class InsufficientSamplesError(ValueError):
    pass


class UnsupportedModelError(ValueError):
    """The exponent formula needs location families with a common gain."""


class InfeasibleTargetError(ValueError):
    def __init__(self, message: str, rho: float):
        super().__init__(message)
        self.rho = rho


class NoReliableEstimate(ValueError):
    pass


def _stack(model, Y):
    d = _data(model, Y)
    return d[None] if d.ndim == 2 else d


# ------------------------------------------------------------ detection


@dataclass(frozen=True)
class BinaryDetector:
    """Declare an attack when ``f_hat / f_0`` exceeds ``threshold``; randomise with ``rho`` at equality."""

    threshold: float
    rho: float = 0.0
    alpha: float | None = None

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")

    @property
    def log_threshold(self) -> float:
        return math.log(self.threshold) if self.threshold > 0 else -math.inf


def log_likelihood_ratio(model: ModelSpace, Y) -> np.ndarray:
    """``log f_hat(Y) - log f_0(Y)`` for a data stack."""
    d = _stack(model, Y)
    llr = log_mixture_density(model, d) - posterior(model, 0, d).log_evidence
    bad = ~np.isfinite(llr)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite likelihood ratio at data set {k}: {d[k].tolist()}")
    return llr


def _ties(llr, lt):
    """Ratios equal to the threshold up to floating-point noise."""
    return np.abs(llr - lt) <= LLR_TIE_TOL * (1.0 + abs(lt)) if math.isfinite(lt) else llr == lt


def _decide(llr, detector: BinaryDetector, rng) -> np.ndarray:
    lt = detector.log_threshold
    tie = _ties(llr, lt)
    attack = (llr > lt) & ~tie
    if detector.rho > 0 and tie.any():
        rng = rng if rng is not None else substream(0)
        attack |= tie & (rng.random(llr.shape) < detector.rho)
    return attack


def np_detect(model: ModelSpace, Y, detector: BinaryDetector, mc: MonteCarloConfig | None = None,
              rng: np.random.Generator | None = None):
    """Attack decision(s) of the Neyman-Pearson test; a bool for one batch, an array for a stack."""
    d = _data(model, Y)
    out = _decide(log_likelihood_ratio(model, d), detector, rng)
    return bool(out[0]) if d.ndim == 2 else out


def _attack_free_llr(model, mc, key):
    def run(b, size):
        _, Y = sample_stack(model, 0, substream(mc.seed, key, b), size)
        return log_likelihood_ratio(model, Y)
    return np.concatenate(map_blocks(run, mc.samples, mc.workers))


def calibrate_np_threshold(model: ModelSpace, alpha: float, mc: MonteCarloConfig | None = None) -> BinaryDetector:
    """Threshold at the empirical ``1 - alpha`` quantile of the likelihood ratio under ``f_0``.

    ``rho`` is set so that the calibration sample's false-alarm rate equals
    ``alpha``; it stays at zero unless the ratio has atoms.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    mc = mc or MonteCarloConfig()
    if mc.samples < 100.0 / alpha:
        raise InsufficientSamplesError(f"need at least {math.ceil(100 / alpha)} samples for alpha={alpha}")
    llr = _attack_free_llr(model, mc, 51)
    lt = empirical_quantile(llr, 1.0 - alpha)
    tie = _ties(llr, lt)
    above = int(np.sum((llr > lt) & ~tie))
    ties = int(np.sum(tie))
    rho = min(max((alpha * llr.size - above) / ties, 0.0), 1.0) if ties else 0.0
    return BinaryDetector(float(math.exp(lt)), float(rho), alpha)


# ------------------------------------------------------------ isolation


class IsolationRule:
    """Maps a data stack to scenario indices ``1..T``."""

    def select(self, model: ModelSpace, Y) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class OptimalBayes(IsolationRule):
    """MAP scenario given an attack; ``weights`` default to the scenario priors."""

    weights: tuple | None = None

    def select(self, model, Y):
        w = model.attack_weights if self.weights is None else np.asarray(self.weights, float)
        if model.T == 1:
            return np.ones(len(_stack(model, Y)), int)
        logf = log_marginal_likelihoods(model, _stack(model, Y), range(1, model.T + 1))
        with np.errstate(divide="ignore"):
            return 1 + np.argmax(logf + np.log(w), axis=1)


def coordinate_log_lr(model: ModelSpace, Y, plug_in: bool = False) -> np.ndarray:
    """Per-coordinate log-likelihood ratios ``log g_l^1(Y_l) - log g_l^0(Y_l)``, shape ``(N, m)``.

    Each marginal integrates that coordinate's likelihood over the prior. With
    ``plug_in`` the ratio is instead taken at the attack-free posterior mean.
    """
    d = _stack(model, Y)
    if plug_in:
        x = posterior(model, 0, d).mean[:, None]
        out = np.empty(d.shape[::2])
        for l, (g0, g1) in enumerate(zip(model.attack_free, model.compromised)):
            out[:, l] = np.sum(g1.logpdf(d[:, :, l], x) - g0.logpdf(d[:, :, l], x), axis=1)
        return out
    from .quadrature import integrate
    cols = []
    for l, (g0, g1) in enumerate(zip(model.attack_free, model.compromised)):
        col = d[:, :, l:l + 1]
        cols.append(integrate(model.prior, (g1,), col).log_evidence
                    - integrate(model.prior, (g0,), col).log_evidence)
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class MarginalLR(IsolationRule):
    """Scenario maximising the product of its coordinates' likelihood ratios."""

    plug_in: bool = False

    def select(self, model, Y):
        if model.T == 1:
            return np.ones(len(_stack(model, Y)), int)
        llr = coordinate_log_lr(model, Y, self.plug_in)
        score = llr @ model.membership[1:].T.astype(float)
        return 1 + np.argmax(score, axis=1)


def isolate_optimal(model: ModelSpace, Y, posteriors: Sequence[float] | None = None,
                    mc: MonteCarloConfig | None = None):
    d = _data(model, Y)
    out = OptimalBayes(None if posteriors is None else tuple(posteriors)).select(model, d)
    return int(out[0]) if d.ndim == 2 else out


def isolate_lr(model: ModelSpace, Y, plug_in: bool = False):
    d = _data(model, Y)
    out = MarginalLR(plug_in).select(model, d)
    return int(out[0]) if d.ndim == 2 else out


# ------------------------------------------------------------- exponents


def _logpdf_of(obj) -> Callable:
    if hasattr(obj, "logpdf"):
        return obj.logpdf
    if callable(obj):
        return obj
    raise TypeError("expected a log-density callable or an object with logpdf")


def _log_bhattacharyya(lg, lh, lam, lo, hi, center):
    def integrand(y):
        return math.exp(lam * lg(y) + (1.0 - lam) * lh(y))
    pts = [p for p in center if lo < p < hi]
    if math.isinf(lo) or math.isinf(hi):
        # split at the supplied centres so quad sees each bump
        edges = [lo] + sorted(pts) + [hi]
        val = sum(sp_integrate.quad(integrand, a, b, limit=200, epsabs=0.0, epsrel=1e-11)[0]
                  for a, b in zip(edges[:-1], edges[1:]))
    else:
        val = sp_integrate.quad(integrand, lo, hi, points=pts or None, limit=200,
                                epsabs=0.0, epsrel=1e-11)[0]
    return math.log(val) if val > 0 else -math.inf


def chernoff_information(g, h, tol: float = 1e-7, support=(-math.inf, math.inf),
                         center: Sequence[float] = (0.0,)) -> float:
    """``-log min_lambda int g^lambda h^(1 - lambda)``; ``inf`` when the supports do not overlap.

    ``g`` and ``h`` are log-density callables or objects with ``logpdf``.
    ``center`` lists points near the bulk of the densities.
    """
    lg, lh = _logpdf_of(g), _logpdf_of(h)
    lo, hi = support

    def f(lam):
        return _log_bhattacharyya(lg, lh, lam, lo, hi, center)

    if f(0.5) == -math.inf:
        return math.inf
    _, val = golden_section_min(f, 1e-9, 1.0 - 1e-9, tol)
    return float(max(-val, 0.0))


def _pair_terms(model: ModelSpace):
    for g0, g1 in zip(model.attack_free, model.compromised):
        s0, s1 = g0.standardized(), g1.standardized()
        if s0 is None or s1 is None:
            raise UnsupportedModelError(f"{type(g0).__name__}/{type(g1).__name__} is not a location family")
        shift0 = g0.location(0.0) - g1.location(0.0)
        shift1 = g0.location(1.0) - g1.location(1.0)
        if not math.isclose(float(shift0), float(shift1), abs_tol=1e-12):
            raise UnsupportedModelError("attack-free and compromised gains differ")


def _coordinate_log_coefficient(g0, g1, lam: float, flip: bool) -> float:
    a, b = (g0, g1) if flip else (g1, g0)
    la = lambda y: float(a.logpdf(y, 0.0))
    lb = lambda y: float(b.logpdf(y, 0.0))
    c = [float(g0.location(0.0)), float(g1.location(0.0))]
    return _log_bhattacharyya(la, lb, lam, -math.inf, math.inf, c)


def pairwise_exponent(model: ModelSpace, i: int, j: int, tol: float = 1e-7) -> float:
    """Per-sample Chernoff information between scenarios ``i`` and ``j`` given ``X``."""
    _pair_terms(model)
    Si, Sj = model.scenarios[i - 1].coords, model.scenarios[j - 1].coords
    only_i, only_j = sorted(Si - Sj), sorted(Sj - Si)
    if not only_i and not only_j:
        return 0.0
    fam0, fam1 = model.attack_free, model.compromised

    def f(lam):
        s = sum(_coordinate_log_coefficient(fam0[l], fam1[l], lam, False) for l in only_i)
        s += sum(_coordinate_log_coefficient(fam0[l], fam1[l], lam, True) for l in only_j)
        return s

    _, val = golden_section_min(f, 1e-9, 1.0 - 1e-9, tol)
    return float(max(-val, 0.0))


def predicted_exponent(model: ModelSpace, tol: float = 1e-7) -> float:
    """Isolation error exponent: the smallest pairwise Chernoff information between scenarios."""
    _pair_terms(model)
    if model.T < 2:
        return math.inf
    return min(pairwise_exponent(model, i, j, tol)
               for i in range(1, model.T + 1) for j in range(1, model.T + 1) if i != j)


def joint_exponent(model: ModelSpace, mc: MonteCarloConfig | None = None, tol: float = 1e-4) -> float:
    """Chernoff information between the prior-integrated single-sample laws of the closest scenarios.

    Estimated by Monte Carlo on common draws; a diagnostic next to
    :func:`predicted_exponent`.
    """
    mc = mc or MonteCarloConfig(20_000)
    m1 = model.with_n(1)
    best = math.inf
    for i in range(1, model.T + 1):
        for j in range(i + 1, model.T + 1):
            _, Y = sample_stack(m1, j, substream(mc.seed, 61, i, j), mc.samples)
            lf = log_marginal_likelihoods(m1, Y, (i, j))
            d = lf[:, 0] - lf[:, 1]
            shift = float(np.max(d))

            def f(lam):
                return lam * shift + math.log(np.mean(np.exp(lam * (d - shift))))

            _, val = golden_section_min(f, 1e-9, 1.0 - 1e-9, tol)
            best = min(best, max(-val, 0.0))
    return float(best)


@dataclass(frozen=True)
class ExponentReport:
    predicted: float
    slope: float
    slope_se: float
    n_grid: tuple
    error_rates: tuple
    trials: int
    dropped: tuple = ()
    sparse: tuple = ()
    plain_slope: float = math.nan


def fit_exponent(n, p, trials):
    """Weighted fit of ``-log p`` on ``[n, log n, 1]``; returns ``(slope, se, plain_slope)``.

    Weights are the inverse delta-method variances ``trials p / (1 - p)``; the
    ``log n`` column absorbs the polynomial prefactor of the error rate.
    """
    n, p = np.asarray(n, float), np.asarray(p, float)
    y = -np.log(p)
    w = trials * p / (1.0 - p)
    A = np.column_stack([n, np.log(n), np.ones_like(n)])
    AW = A * w[:, None]
    cov = np.linalg.inv(A.T @ AW)
    beta = cov @ AW.T @ y
    dof = len(n) - 3
    scale = float(np.sum(w * (y - A @ beta) ** 2) / dof) if dof > 0 else 1.0
    se = math.sqrt(cov[0, 0] * max(scale, 1.0))
    plain = float(np.polyfit(n, y, 1)[0])
    return float(beta[0]), se, plain


def isolation_error_rate(model: ModelSpace, rule: IsolationRule, trials: int, seed: int,
                         workers: int = 1, key: int = 0) -> tuple[int, int]:
    """``(errors, trials)`` for ``rule`` on data drawn from the attack mixture."""
    w = model.attack_weights

    def run(b, size):
        rng = substream(seed, 71, key, b)
        h = 1 + rng.choice(model.T, size=size, p=w / w.sum())
        err = 0
        for i in range(1, model.T + 1):
            k = int(np.sum(h == i))
            if k:
                _, Y = sample_stack(model, i, rng, k)
                err += int(np.sum(rule.select(model, Y) != i))
        return err

    return sum(map_blocks(run, trials, workers)), trials


def empirical_exponent(model: ModelSpace, rule: IsolationRule, n_grid: Sequence[int], trials: int,
                       seed: int, workers: int = 1, min_errors: int = 20) -> ExponentReport:
    """Regression slope of ``-log P_is`` against ``n`` for data generated under an attack.

    Sample sizes with no isolation errors are dropped; those with fewer than
    ``min_errors`` errors are kept but listed in ``sparse``.
    """
    if len(n_grid) < 3:
        raise ValueError("need at least three sample sizes")
    rates, kept, dropped, sparse = [], [], [], []
    for n in n_grid:
        err, tot = isolation_error_rate(model.with_n(int(n)), rule, trials, seed, workers, key=int(n))
        rates.append(err / tot)
        if err == 0:
            dropped.append(int(n))
            continue
        if err < min_errors:
            sparse.append(int(n))
        kept.append(int(n))
    p = np.array([r for n, r in zip(n_grid, rates) if int(n) in kept])
    if len(kept) < 3:
        raise NumericalError("fewer than three sample sizes with observed errors")
    slope, se, plain = fit_exponent(kept, p, trials)
    return ExponentReport(predicted_exponent(model), slope, se, tuple(int(n) for n in n_grid),
                          tuple(rates), trials, tuple(dropped), tuple(sparse), plain)


# ------------------------------------------------ coordinate estimation


@dataclass(frozen=True)
class ReliabilityTest:
    """Retain a branch-``j`` estimate at coordinate ``l`` when its posterior cost is at most ``threshold``.

    Costs equal to the threshold are kept with probability ``tie_prob``.
    """

    coordinate: int
    branch: int
    nu: float
    rho: float
    threshold: float
    tie_prob: float = 1.0

    def accepts(self, cost, u=None):
        cost = np.asarray(cost, float)
        tie = np.abs(cost - self.threshold) <= 1e-12 * max(abs(self.threshold), 1e-300)
        keep = (cost < self.threshold) & ~tie
        if u is None:
            return keep | (tie & (self.tie_prob >= 1.0))
        return keep | (tie & (np.asarray(u) < self.tie_prob))


@dataclass(frozen=True)
class CoordinateEstimate:
    coordinate: int
    branch: int
    estimate: float
    posterior_cost: float
    reliable: bool = True


def coordinate_model(model: ModelSpace, l: int) -> ModelSpace:
    """Single-coordinate model: hypothesis 0 uses ``g_l^0`` and hypothesis 1 uses ``g_l^1``."""
    if not 0 <= l < model.m:
        raise ContractError(f"coordinate {l} outside 0..{model.m - 1}")
    return ModelSpace((model.attack_free[l],), (model.compromised[l],), model.prior, model.n,
                      (AttackScenario(frozenset({0}), 0.5),), 0.5)


def coordinate_costs(model: ModelSpace, l: int, j: int, Yl, cost=SquaredError()):
    """Estimates and minimal posterior costs from column ``l`` alone under branch ``j``."""
    sub = coordinate_model(model, l)
    Yl = np.asarray(Yl, float)
    if Yl.ndim == 2 and Yl.shape[-1] != 1:
        Yl = Yl[..., None]
    elif Yl.ndim == 1:
        Yl = Yl[None, :, None]
    est, c = optimal_estimates(sub, j, Yl, cost)
    return est, np.maximum(c, 0.0)


def coordinate_estimate(model: ModelSpace, l: int, j: int, Y_l, mc: MonteCarloConfig | None = None,
                        cost=SquaredError(), test: ReliabilityTest | None = None) -> CoordinateEstimate:
    """Optimal estimate and posterior cost from one coordinate's ``n`` samples."""
    if j not in (0, 1):
        raise ContractError("branch must be 0 or 1")
    col = np.asarray(Y_l, float).reshape(1, -1, 1)
    est, c = coordinate_costs(model, l, j, col, cost)
    ok = True if test is None else bool(test.accepts(c[0]))
    return CoordinateEstimate(l, j, float(est[0]), float(c[0]), ok)


def fuse(estimates: Sequence[CoordinateEstimate]) -> float:
    """Inverse-cost weighted mean of the reliable estimates."""
    kept = [e for e in estimates if e.reliable]
    if not kept:
        raise NoReliableEstimate("no reliable coordinate estimate to fuse")
    if len(kept) == 1:
        return kept[0].estimate
    x = np.array([e.estimate for e in kept])
    c = np.array([e.posterior_cost for e in kept])
    if np.any(c <= 0):
        return float(np.mean(x[c <= 0]))
    w = 1.0 / c
    return float(np.sum(w * x) / np.sum(w))


def _fuse_arrays(est, c, keep, fallback):
    """Row-wise :func:`fuse` for arrays of shape ``(N, m)``; rows without estimates use ``fallback``."""
    exact = keep & (c <= 0)
    with np.errstate(divide="ignore"):
        w = np.where(keep, 1.0 / np.where(c > 0, c, 1.0), 0.0)
    w = np.where(exact.any(axis=1, keepdims=True), exact.astype(float), w)
    tot = w.sum(axis=1)
    out = np.where(tot > 0, np.sum(w * est, axis=1) / np.where(tot > 0, tot, 1.0), fallback)
    return out, tot == 0


# -------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class PipelineConfig:
    """``nu[l] = (nu_l^0, nu_l^1)`` retention targets; ``isolation`` is ``"lr"`` or ``"optimal"``."""

    alpha: float
    nu: tuple
    isolation: str = "lr"
    cost: object = SquaredError()

    def __post_init__(self):
        object.__setattr__(self, "nu", tuple(tuple(float(v) for v in row) for row in self.nu))
        if self.isolation not in ("lr", "optimal"):
            raise ValueError("isolation must be 'lr' or 'optimal'")

    def rule(self) -> IsolationRule:
        return MarginalLR() if self.isolation == "lr" else OptimalBayes()


@dataclass(frozen=True)
class CalibratedPipeline:
    config: PipelineConfig
    detector: BinaryDetector
    tests: tuple          # tests[l][j]
    rho: np.ndarray       # (m, 2) classification-success rates


@dataclass
class PipelineBatch:
    hypothesis: np.ndarray | None
    attack: np.ndarray
    scenario: np.ndarray
    branch: np.ndarray
    estimates: np.ndarray
    costs: np.ndarray
    reliable: np.ndarray
    fused: np.ndarray
    fallback: np.ndarray


def _branches(model, attack, scenario):
    M = model.membership
    return np.where(attack[:, None], M[scenario], False).astype(int)


def _decide_and_estimate(model, cfg, detector, Y, rng):
    attack = _decide(log_likelihood_ratio(model, Y), detector, rng)
    scenario = np.zeros(len(Y), int)
    if attack.any():
        scenario[attack] = cfg.rule().select(model, Y[attack])
    B = _branches(model, attack, scenario)
    est = np.empty(B.shape)
    c = np.empty(B.shape)
    for l in range(model.m):
        for j in (0, 1):
            sel = B[:, l] == j
            if sel.any():
                est[sel, l], c[sel, l] = coordinate_costs(model, l, j, Y[sel][:, :, l:l + 1], cfg.cost)
    return attack, scenario, B, est, c


def _draw_mixture(model, rng, size):
    h = rng.choice(model.T + 1, size=size, p=model.eps / model.eps.sum())
    X = np.empty(size)
    Y = np.empty((size, model.n, model.m))
    for i in range(model.T + 1):
        k = np.flatnonzero(h == i)
        if k.size:
            X[k], Y[k] = sample_stack(model, i, rng, k.size)
    return h, X, Y


def _retention_threshold(c, r):
    """Threshold and tie probability retaining exactly a fraction ``r`` of ``c``."""
    g = empirical_quantile(c, r)
    tie = np.abs(c - g) <= 1e-12 * max(abs(g), 1e-300)
    below = int(np.sum((c < g) & ~tie))
    ties = int(np.sum(tie))
    return g, min(max((r * c.size - below) / ties, 0.0), 1.0) if ties else 1.0


def calibrate_reliability(model: ModelSpace, l: int, j: int, nu: float, mc: MonteCarloConfig | None = None,
                          detector: BinaryDetector | None = None, config: PipelineConfig | None = None,
                          _cache=None) -> ReliabilityTest:
    """Cost threshold whose retained fraction of truly-branch-``j`` data at coordinate ``l`` equals ``nu``.

    Only data both generated and classified as branch ``j`` can be retained,
    so the achievable fraction is bounded by the classification success rate
    ``rho``; the threshold is the ``nu / rho`` quantile of the posterior costs
    in that set.
    """
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    mc = mc or MonteCarloConfig()
    cfg = config or PipelineConfig(0.05, tuple((1.0, 1.0) for _ in range(model.m)))
    if _cache is None:
        det = detector or calibrate_np_threshold(model, cfg.alpha, mc)
        _cache = _calibration_draws(model, cfg, det, mc)
    truth, B, c = _cache
    own = truth[:, l] == j
    if not own.any():
        raise InfeasibleTargetError(f"branch {j} never occurs at coordinate {l}", 0.0)
    good = own & (B[:, l] == j)
    rho = float(good.sum() / own.sum())
    if nu > rho + 1e-12:
        raise InfeasibleTargetError(f"target {nu} exceeds the classification success rate {rho:.6g}", rho)
    vals = c[good, l]
    g, tp = _retention_threshold(vals, min(nu / rho, 1.0))
    return ReliabilityTest(l, j, float(nu), rho, float(g), float(tp))


def _calibration_draws(model, cfg, detector, mc):
    def run(b, size):
        rng = substream(mc.seed, 81, b)
        h, _, Y = _draw_mixture(model, rng, size)
        _, _, B, _, c = _decide_and_estimate(model, cfg, detector, Y, rng)
        return model.membership[h].astype(int), B, c
    parts = map_blocks(run, mc.samples, mc.workers)
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def calibrate_pipeline(model: ModelSpace, config: PipelineConfig, mc: MonteCarloConfig | None = None) -> CalibratedPipeline:
    """NP detector at ``config.alpha`` and one reliability test per coordinate and branch."""
    mc = mc or MonteCarloConfig()
    if len(config.nu) != model.m:
        raise ContractError("one (nu0, nu1) pair per coordinate required")
    det = calibrate_np_threshold(model, config.alpha, mc)
    cache = _calibration_draws(model, config, det, mc)
    tests = tuple(tuple(calibrate_reliability(model, l, j, config.nu[l][j], mc, det, config, cache)
                        for j in (0, 1)) for l in range(model.m))
    rho = np.array([[t.rho for t in row] for row in tests])
    return CalibratedPipeline(config, det, tests, rho)


def run_pipeline_batch(model: ModelSpace, cal: CalibratedPipeline, Y, rng: np.random.Generator,
                       hypothesis=None) -> PipelineBatch:
    d = _stack(model, Y)
    attack, scenario, B, est, c = _decide_and_estimate(model, cal.config, cal.detector, d, rng)
    u = rng.random(B.shape)
    keep = np.zeros(B.shape, bool)
    for l in range(model.m):
        for j in (0, 1):
            sel = B[:, l] == j
            keep[sel, l] = cal.tests[l][j].accepts(c[sel, l], u[sel, l])
    fused, fb = _fuse_arrays(est, c, keep, model.prior.moments()[0])
    return PipelineBatch(hypothesis, attack, scenario, B, est, c, keep, fused, fb)


@dataclass
class PipelineTrace:
    attack: bool
    scenario: int
    estimates: list
    fallback: bool
    density_evaluations: int


def scalable_pipeline(model: ModelSpace, Y, config: CalibratedPipeline, mc: MonteCarloConfig | None = None,
                      rng: np.random.Generator | None = None) -> tuple[float, PipelineTrace]:
    """Detect, isolate, estimate per coordinate, filter and fuse for one observation batch.

    Without any reliable estimate the prior mean is returned and the trace is
    flagged.
    """
    d = _data(model, Y)
    if d.ndim != 2:
        raise ContractError("expected a single (n, m) batch")
    rng = rng if rng is not None else substream((mc or MonteCarloConfig()).seed, 91)
    with count_density_evaluations() as box:
        b = run_pipeline_batch(model, config, d[None], rng)
    ests = [CoordinateEstimate(l, int(b.branch[0, l]), float(b.estimates[0, l]), float(b.costs[0, l]),
                               bool(b.reliable[0, l])) for l in range(model.m)]
    trace = PipelineTrace(bool(b.attack[0]), int(b.scenario[0]), ests, bool(b.fallback[0]), box[0])
    return float(b.fused[0]), trace


@dataclass(frozen=True)
class PipelineEvaluation:
    q_hat: float
    q_hat_se: float
    J_i: tuple
    mse: float
    P_fa: float
    P_md: float
    fallback_rate: float
    retention: np.ndarray    # (m, 2) retained fraction of truly-branch-j data


def evaluate_pipeline(model: ModelSpace, cal: CalibratedPipeline, J0: float,
                      mc: MonteCarloConfig | None = None) -> PipelineEvaluation:
    """Monte Carlo degradation factor of the pipeline.

    ``J_i`` is the mean squared error of the fused estimate under hypothesis
    ``i`` given that the detection and isolation stages chose ``H_i``; the
    factor is ``max_i J_i / J0``, mirroring the definition for the optimal rules.
    """
    mc = mc or MonteCarloConfig()

    def run(b, size):
        rng = substream(mc.seed, 93, b)
        h, X, Y = _draw_mixture(model, rng, size)
        out = run_pipeline_batch(model, cal, Y, rng, h)
        return h, X, out

    parts = map_blocks(run, mc.samples, mc.workers)
    h = np.concatenate([p[0] for p in parts])
    X = np.concatenate([p[1] for p in parts])
    fused = np.concatenate([p[2].fused for p in parts])
    attack = np.concatenate([p[2].attack for p in parts])
    scen = np.concatenate([p[2].scenario for p in parts])
    keep = np.concatenate([p[2].reliable for p in parts])
    branch = np.concatenate([p[2].branch for p in parts])
    fb = float(np.mean(np.concatenate([p[2].fallback for p in parts])))
    err = (fused - X) ** 2
    decided = np.where(attack, scen, 0)
    T1 = model.T + 1
    J_i, J_se = np.zeros(T1), np.zeros(T1)
    for i in range(T1):
        sel = (h == i) & (decided == i)
        if sel.sum() > 1:
            J_i[i] = err[sel].mean()
            J_se[i] = err[sel].std(ddof=1) / math.sqrt(sel.sum())
    k = int(np.argmax(J_i))
    fa = float(np.mean(attack[h == 0])) if np.any(h == 0) else 0.0
    miss = [(np.mean(decided[h == i] != i) if np.any(h == i) else 0.0) for i in range(1, T1)]
    md = float(np.dot(model.attack_weights, miss)) if model.T else 0.0
    truth = model.membership[h].astype(int)
    ret = np.zeros((model.m, 2))
    for l in range(model.m):
        for j in (0, 1):
            own = truth[:, l] == j
            if own.any():
                ret[l, j] = np.mean(keep[own, l] & (branch[own, l] == j))
    return PipelineEvaluation(float(J_i[k] / J0), float(J_se[k] / J0), tuple(float(v) for v in J_i),
                              float(err.mean()), fa, md, fb, ret)
