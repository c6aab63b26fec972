"""Shared numerical kernels.

Monte Carlo with error bars, bracketing root search, golden-section
minimisation, order-statistic quantiles and simplex lattices. Random streams
are derived from ``numpy.random.SeedSequence`` spawn keys feeding a Philox
counter generator, so a block of draws depends only on ``(seed, key)`` and
never on how the work was scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

BLOCK_SIZE = 8192
"""Draws per random block; fixed so results do not depend on ``workers``."""

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NumericalError(RuntimeError):
    """A computation produced non-finite or degenerate output."""


class BracketError(ValueError):
    """A bracketing method was handed an interval with no sign change."""


@dataclass(frozen=True)
class MonteCarloConfig:
    """Sampling budget and reproducibility contract for stochastic routines.

    ``workers`` is only a parallelism hint: blocks are seeded by index and
    merged in a fixed order, so any worker count gives identical output.
    """

    samples: int = 100_000
    seed: int = 20240101
    rel_tol: float = 1e-2
    workers: int = 1

    def __post_init__(self):
        if int(self.samples) < 1:
            raise ValueError("samples must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def with_samples(self, samples: int) -> "MonteCarloConfig":
        return MonteCarloConfig(samples, self.seed, self.rel_tol, self.workers)

    def with_seed(self, seed: int) -> "MonteCarloConfig":
        return MonteCarloConfig(self.samples, seed, self.rel_tol, self.workers)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator addressed by ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def block_sizes(total: int, block: int = BLOCK_SIZE) -> list[int]:
    full, rest = divmod(int(total), block)
    return [block] * full + ([rest] if rest else [])


def map_blocks(fn: Callable[[int, int], object], total: int, workers: int = 1,
               block: int = BLOCK_SIZE) -> list:
    """Apply ``fn(block_index, block_len)`` over fixed blocks, results in order."""
    sizes = block_sizes(total, block)
    if workers <= 1 or len(sizes) <= 1:
        return [fn(b, s) for b, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


def _merge(a, b):
    # Chan et al. pairwise update of (count, mean, M2)
    na, ma, qa = a
    nb, mb, qb = b
    n = na + nb
    d = mb - ma
    return n, ma + d * nb / n, qa + qb + d * d * na * nb / n


def _tree_reduce(parts):
    while len(parts) > 1:
        nxt = [_merge(parts[k], parts[k + 1]) for k in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def mc_expectation(integrand: Callable[[np.ndarray], np.ndarray],
                   sampler: Callable[[np.random.Generator, int], np.ndarray],
                   cfg: MonteCarloConfig, key: Sequence[int] = ()) -> tuple[float, float]:
    """Sample mean of ``integrand`` under ``sampler`` with its standard error.

    ``sampler(rng, size)`` returns ``size`` points (leading axis) and
    ``integrand`` maps them to a vector of reals. Points whose integrand is
    NaN are discarded; if all are NaN a :class:`NumericalError` is raised.
    """

    def run(b, size):
        rng = substream(cfg.seed, *key, b)
        vals = np.asarray(integrand(sampler(rng, size)), dtype=float).reshape(-1)
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            return None
        if not np.all(np.isfinite(vals)):
            raise NumericalError("integrand returned infinite values")
        mu = float(vals.mean())
        return vals.size, mu, float(((vals - mu) ** 2).sum())

    parts = [p for p in map_blocks(run, cfg.samples, cfg.workers) if p is not None]
    if not parts:
        raise NumericalError("integrand was NaN for every sample")
    n, mean, m2 = _tree_reduce(parts)
    se = math.sqrt(m2 / (n - 1) / n) if n > 1 else 0.0
    return mean, se


def golden_section_min(f: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-8, max_iter: int = 500) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on ``[lo, hi]``; returns ``(argmin, min)``.

    The endpoints are compared against the final interior point so that a
    monotone ``f`` returns the matching endpoint.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")

    def ev(x):
        v = float(f(x))
        if not math.isfinite(v):
            raise NumericalError(f"objective not finite at {x!r}")
        return v

    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = ev(c), ev(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = ev(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = ev(d)
    x, fx = (c, fc) if fc <= fd else (d, fd)
    for e in (lo, hi):
        fe = ev(e)
        if fe < fx:
            x, fx = e, fe
    return x, fx


def bisect(predicate: Callable[[float], bool], lo: float, hi: float,
           tol: float = 1e-6, max_iter: int = 200) -> float:
    """Locate where a monotone predicate switches from False to True.

    Returns the right end of the final bracket, i.e. a point where the
    predicate holds. If it already holds at ``lo``, ``lo`` is returned; if it
    fails at ``hi`` a :class:`BracketError` is raised.
    """
    if not lo <= hi:
        raise ValueError("need lo <= hi")
    if not predicate(hi):
        raise BracketError("predicate is false over the whole bracket")
    if predicate(lo):
        return lo
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return hi


def empirical_quantile(samples, p: float) -> float:
    """Type-1 (inverse empirical CDF) quantile: the ``ceil(p N)``-th order statistic."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if x.size == 0:
        raise ValueError("empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    k = max(int(math.ceil(p * x.size - 1e-12)), 1)
    return float(x[k - 1])


def simplex_grid(dim: int, resolution: int) -> np.ndarray:
    """All points of the simplex with coordinates on a ``1/(resolution-1)`` lattice.

    Returns an array of shape ``(C(resolution+dim-2, dim-1), dim)``.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    parts = resolution - 1
    rows = []
    # stars and bars: choose dim-1 bar positions among parts+dim-1 slots
    for bars in combinations(range(parts + dim - 1), dim - 1):
        edges = (-1,) + bars + (parts + dim - 1,)
        rows.append([edges[k + 1] - edges[k] - 1 for k in range(dim)])
    return np.asarray(rows, dtype=float) / parts
