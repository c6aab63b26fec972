"""Posterior integration over a scalar parameter.

Every likelihood in the package has the form ``prior(x) * prod_l g_l(Y_l | x)``
(optionally times a finite mixture of coordinate swaps). For batches of data
sets this module returns the log evidence and posterior moments, using
closed forms for the two conjugate cases and adaptive composite
Gauss-Legendre quadrature otherwise. A self-normalised importance sampler is
kept alongside as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .families import (
    GaussianMeanShift,
    GaussianPrior,
    GaussianVarianceOnly,
    InverseChiSquaredPrior,
    tally,
)
from .numerics import MonteCarloConfig, NumericalError, substream

_LOG_2PI = math.log(2.0 * math.pi)

COARSE_NODES = 201
PANELS = 8
PANEL_ORDER = 16
ZOOM_DROP = 80.0
CHUNK = 1024
GAUSS_HALF_WIDTH = 20.0
FINE_NODES = 8001
FINE_DROP = 40.0

_GL_X, _GL_W = np.polynomial.legendre.leggauss(PANEL_ORDER)


@dataclass(frozen=True)
class Mixture:
    """Swap coordinates in ``membership[i]`` to ``alt[l]`` with weight ``exp(log_weights[i])``."""

    alt: tuple
    membership: np.ndarray
    log_weights: np.ndarray


@dataclass
class PosteriorBatch:
    """Posterior summaries for ``N`` data sets.

    ``nodes``/``logw`` hold a normalised quadrature rule for the posterior when
    a grid was requested; they are ``None`` for closed-form results.
    """

    log_evidence: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    nodes: np.ndarray | None = None
    logw: np.ndarray | None = None

    def expect(self, fn) -> np.ndarray:
        if self.nodes is None:
            raise ValueError("posterior grid was not requested")
        return np.sum(np.exp(self.logw) * fn(self.nodes), axis=-1)


def _as_stack(Y) -> np.ndarray:
    Y = np.asarray(Y, float)
    if Y.ndim == 2:
        Y = Y[None]
    if Y.ndim != 3:
        raise ValueError("expected data of shape (n, m) or (N, n, m)")
    return Y


def integrate(prior, fams: Sequence, Y, *, mixture: Mixture | None = None,
              grid: bool = False) -> PosteriorBatch:
    """Evidence and posterior mean/variance of ``x`` for each data set in ``Y``.

    ``Y`` has shape ``(N, n, m)`` and ``fams[l]`` is the family of column ``l``.
    """
    Y = _as_stack(Y)
    N, n, m = Y.shape
    if len(fams) != m:
        raise ValueError(f"{len(fams)} families for {m} columns")
    tally(N * n * m * (2 if mixture is not None else 1))
    if prior.degenerate:
        return _point_mass(prior, fams, Y, mixture, grid)
    if mixture is None and not grid:
        if isinstance(prior, GaussianPrior) and all(isinstance(f, GaussianMeanShift) for f in fams):
            return _conjugate_gaussian(prior, fams, Y)
        if isinstance(prior, InverseChiSquaredPrior) and all(isinstance(f, GaussianVarianceOnly) for f in fams):
            return _conjugate_invchisq(prior, fams, Y)
    parts = [_numeric(prior, fams, Y[s:s + CHUNK], mixture, grid) for s in range(0, N, CHUNK)]
    if len(parts) == 1:
        return parts[0]
    cat = lambda k: None if getattr(parts[0], k) is None else np.concatenate([getattr(p, k) for p in parts])
    return PosteriorBatch(cat("log_evidence"), cat("mean"), cat("var"), cat("nodes"), cat("logw"))


# ------------------------------------------------------------ closed forms


def _conjugate_gaussian(prior, fams, Y):
    n = Y.shape[1]
    prec = 1.0 / prior.var
    lin = np.full(Y.shape[0], prior.mean / prior.var)
    const = -0.5 * (_LOG_2PI + math.log(prior.var)) - 0.5 * prior.mean ** 2 / prior.var
    quad = np.zeros(Y.shape[0])
    for l, f in enumerate(fams):
        d = Y[:, :, l] - f.offset
        prec += n * f.h ** 2 / f.var
        lin = lin + f.h * d.sum(axis=1) / f.var
        quad += (d * d).sum(axis=1) / f.var
        const += -0.5 * n * (_LOG_2PI + math.log(f.var))
    mean = lin / prec
    logz = const - 0.5 * quad + 0.5 * (_LOG_2PI - math.log(prec)) + 0.5 * lin * lin / prec
    return PosteriorBatch(logz, mean, np.full_like(mean, 1.0 / prec))


def invchisq_posterior(zeta: float, phi: float, ss, count: int):
    """Posterior mean and variance of the variance parameter.

    ``ss`` is the (scaled) residual sum of squares over ``count`` scalar
    observations. Returns ``(mean, var)``; entries are ``inf`` where the
    corresponding posterior moment does not exist.
    """
    a = zeta + count
    s = zeta * phi + np.asarray(ss, float)
    mean = s / (a - 2.0) if a > 2 else np.full_like(s, np.inf)
    var = 2.0 * s * s / ((a - 2.0) ** 2 * (a - 4.0)) if a > 4 else np.full_like(s, np.inf)
    return mean, var


def _conjugate_invchisq(prior, fams, Y):
    n, m = Y.shape[1:]
    ss = np.zeros(Y.shape[0])
    const = 0.0
    for l, f in enumerate(fams):
        ss += ((Y[:, :, l] - f.mean_value) ** 2).sum(axis=1) / f.scale
        const -= 0.5 * n * (_LOG_2PI + math.log(f.scale))
    k, cnt = 0.5 * prior.zeta, n * m
    logz = (const + k * math.log(k * prior.phi) - special.gammaln(k)
            + special.gammaln(k + 0.5 * cnt) - (k + 0.5 * cnt) * np.log(0.5 * (prior.zeta * prior.phi + ss)))
    mean, var = invchisq_posterior(prior.zeta, prior.phi, ss, cnt)
    return PosteriorBatch(logz, mean, var)


def _point_mass(prior, fams, Y, mixture, grid):
    x = np.full((Y.shape[0], 1), prior.x0)
    logz = _log_integrand(prior, fams, Y, mixture, x, positive=False, with_prior=False)[:, 0]
    mean = np.full(Y.shape[0], prior.x0)
    out = PosteriorBatch(logz, mean, np.zeros_like(mean))
    if grid:
        out.nodes, out.logw = x, np.zeros_like(x)
    return out


# ------------------------------------------------------------- quadrature


def _log_integrand(prior, fams, Y, mixture, x, positive, with_prior=True):
    """Log of prior * likelihood at nodes ``x`` (N, G), including the log-Jacobian."""
    out = np.zeros_like(x)
    if with_prior:
        out += prior.logpdf(x)
        if positive:
            out += np.log(x)
    base = [f.loglik(Y[:, :, l], x) for l, f in enumerate(fams)]
    for b in base:
        out += b
    if mixture is not None:
        diff = np.stack([g.loglik(Y[:, :, l], x) - base[l] for l, g in enumerate(mixture.alt)], axis=-1)
        swaps = diff @ mixture.membership.T.astype(float) + mixture.log_weights
        out += special.logsumexp(swaps, axis=-1)
    return np.where(np.isnan(out), -np.inf, out)


def _gaussian_windows(prior, fams, Y, mixture):
    """Centre/half-width from the Gaussian part of each candidate likelihood."""
    N, n, m = Y.shape
    p0 = 1.0 / prior.var if isinstance(prior, GaussianPrior) else 0.0
    b0 = prior.mean / prior.var if isinstance(prior, GaussianPrior) else 0.0

    def contrib(fset):
        pc = np.zeros(m)
        bc = np.zeros((N, m))
        for l, f in enumerate(fset):
            g = f.gaussian_part()
            if g is not None:
                h, v, o = g
                pc[l] = n * h * h / v
                bc[:, l] = h * (Y[:, :, l] - o).sum(axis=1) / v
        return pc, bc

    pc, bc = contrib(fams)
    precs = [np.full(N, p0 + pc.sum())]
    lins = [b0 + bc.sum(axis=1)]
    if mixture is not None:
        pa, ba = contrib(mixture.alt)
        M = mixture.membership.astype(float)
        for row in M:
            precs.append(np.full(N, p0 + pc.sum() + row @ (pa - pc)))
            lins.append(b0 + bc.sum(axis=1) + (ba - bc) @ row)
    lo = np.full(N, np.inf)
    hi = np.full(N, -np.inf)
    for p, b in zip(precs, lins):
        if np.all(p <= 0):
            return None
        c = b / p
        w = GAUSS_HALF_WIDTH / np.sqrt(p)
        lo, hi = np.minimum(lo, c - w), np.maximum(hi, c + w)
    return lo, hi


def _initial_window(prior, fams, Y, mixture):
    N = Y.shape[0]
    s_lo, s_hi = prior.support()
    if prior.positive:
        # generous upper margin: posterior moments can have polynomial tails
        lo = math.log(float(prior.ppf(1e-14))) - 5.0
        hi = math.log(float(prior.ppf(1.0 - 1e-14))) + 40.0
        return np.full(N, lo), np.full(N, hi)
    win = _gaussian_windows(prior, fams, Y, mixture)
    if win is None:
        if not (math.isfinite(s_lo) and math.isfinite(s_hi)):
            raise NumericalError("cannot bracket the posterior: no Gaussian part and unbounded support")
        return np.full(N, s_lo), np.full(N, s_hi)
    lo, hi = win
    return np.maximum(lo, s_lo), np.minimum(hi, s_hi)


def _numeric(prior, fams, Y, mixture, grid):
    positive = prior.positive
    to_x = np.exp if positive else (lambda t: t)
    lo, hi = _initial_window(prior, fams, Y, mixture)
    u = np.linspace(0.0, 1.0, COARSE_NODES)
    for _ in range(6):
        t = lo[:, None] + (hi - lo)[:, None] * u
        L = _log_integrand(prior, fams, Y, mixture, to_x(t), positive)
        top = L.max(axis=1)
        if not np.all(np.isfinite(top)):
            raise NumericalError("integrand vanishes on the whole window")
        keep = L >= (top - ZOOM_DROP)[:, None]
        first = keep.argmax(axis=1)
        last = COARSE_NODES - 1 - keep[:, ::-1].argmax(axis=1)
        step = (hi - lo) / (COARSE_NODES - 1)
        new_lo = np.maximum(lo, lo + (first - 1) * step)
        new_hi = np.minimum(hi, lo + (last + 1) * step)
        shrink = (new_hi - new_lo) / np.maximum(hi - lo, 1e-300)
        lo, hi = new_lo, new_hi
        if np.all(shrink > 0.25):
            break
    # composite Gauss-Legendre on the final window
    edges = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, PANELS + 1)
    half = 0.5 * (edges[:, 1:] - edges[:, :-1])
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    t = (mid[:, :, None] + half[:, :, None] * _GL_X).reshape(len(lo), -1)
    w = (half[:, :, None] * _GL_W).reshape(len(lo), -1)
    x = to_x(t)
    L = _log_integrand(prior, fams, Y, mixture, x, positive) + np.log(w)
    logz = special.logsumexp(L, axis=1)
    logw = L - logz[:, None]
    pw = np.exp(logw)
    mean = (pw * x).sum(axis=1)
    var = np.maximum((pw * (x - mean[:, None]) ** 2).sum(axis=1), 0.0)
    out = PosteriorBatch(logz, mean, var)
    if grid:
        out.nodes, out.logw = x, logw
    return out


def refine(prior, fams: Sequence, Y, coarse: PosteriorBatch, size: int = FINE_NODES) -> PosteriorBatch:
    """Dense uniform trapezoid rule over the bulk of a coarse posterior grid.

    Gauss-Legendre nodes are too sparse for integrands with kinks, such as
    the absolute-error cost, so the posterior is re-tabulated on ``size``
    evenly spaced points (in ``log x`` for positive parameters).
    """
    Y = _as_stack(Y)
    if prior.degenerate:
        return coarse
    positive = prior.positive
    t_coarse = np.log(coarse.nodes) if positive else coarse.nodes
    keep = coarse.logw >= coarse.logw.max(axis=1, keepdims=True) - FINE_DROP
    lo = np.where(keep, t_coarse, np.inf).min(axis=1)
    hi = np.where(keep, t_coarse, -np.inf).max(axis=1)
    hi = np.maximum(hi, lo + 1e-12)
    u = np.linspace(0.0, 1.0, size)
    trap = np.full(size, 1.0)
    trap[[0, -1]] = 0.5
    nodes, logws = [], []
    for s in range(0, len(lo), 64):
        l, h = lo[s:s + 64, None], hi[s:s + 64, None]
        t = l + (h - l) * u
        x = np.exp(t) if positive else t
        L = _log_integrand(prior, fams, Y[s:s + 64], None, x, positive) + np.log(trap)
        nodes.append(x)
        logws.append(L - special.logsumexp(L, axis=1, keepdims=True))
    return PosteriorBatch(coarse.log_evidence, coarse.mean, coarse.var, np.concatenate(nodes),
                          np.concatenate(logws))


# ------------------------------------------------------- importance sampling


@dataclass
class ImportanceResult:
    evidence: float
    evidence_se: float
    x: np.ndarray
    weights: np.ndarray
    ess: float

    def expect(self, fn) -> tuple[float, float]:
        """Self-normalised estimate of ``E[fn(x) | Y]`` and its delta-method standard error."""
        v = np.asarray(fn(self.x), float)
        w = self.weights / self.weights.sum()
        est = float(np.sum(w * v))
        se = float(np.sqrt(np.sum(w * w * (v - est) ** 2)))
        return est, se


def importance_sample(prior, fams, Y, mc: MonteCarloConfig, key=(0,),
                      ess_floor: float = 0.1, rounds: int = 3) -> ImportanceResult:
    """Self-normalised importance sampling for a single data set ``Y`` (n, m).

    The prior is the first proposal. When the effective sample size falls
    below ``ess_floor * samples`` a Student-t proposal fitted to the current
    weighted sample (in ``log x`` for positive parameters) replaces it.
    """
    Y = _as_stack(Y)
    if Y.shape[0] != 1:
        raise ValueError("importance sampling handles one data set at a time")
    S = mc.samples
    rng = substream(mc.seed, *key)
    x = prior.sample(rng, S)
    logq = prior.logpdf(x)
    tally(Y.size)
    for r in range(rounds + 1):
        loglik = sum(f.loglik(Y[:, :, l], x[None, :]) for l, f in enumerate(fams))[0]
        logw = prior.logpdf(x) + loglik - logq
        logw = np.where(np.isnan(logw), -np.inf, logw)
        top = logw.max()
        if not math.isfinite(top):
            raise NumericalError("all importance weights vanish")
        w = np.exp(logw - top)
        ess = w.sum() ** 2 / (w * w).sum()
        if ess >= ess_floor * S or r == rounds:
            break
        # refit proposal
        t = np.log(x) if prior.positive else x
        pw = w / w.sum()
        mu = float(np.sum(pw * t))
        sd = max(math.sqrt(float(np.sum(pw * (t - mu) ** 2))), 1e-6) * 2.0
        df = 4.0
        tt = mu + sd * rng.standard_t(df, S)
        logq_t = (special.gammaln(0.5 * (df + 1)) - special.gammaln(0.5 * df)
                  - 0.5 * math.log(df * math.pi) - math.log(sd)
                  - 0.5 * (df + 1) * np.log1p(((tt - mu) / sd) ** 2 / df))
        if prior.positive:
            x, logq = np.exp(tt), logq_t - tt
        else:
            x, logq = tt, logq_t
    mean_w = w.mean()
    evidence = math.exp(top) * mean_w
    se = math.exp(top) * float(w.std(ddof=1)) / math.sqrt(S) if S > 1 else 0.0
    return ImportanceResult(evidence, se, x, w, float(ess))
