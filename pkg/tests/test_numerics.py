import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from secure_estimation import (
    BracketError,
    MonteCarloConfig,
    NumericalError,
    bisect,
    empirical_quantile,
    golden_section_min,
    mc_expectation,
    simplex_grid,
)
from secure_estimation.numerics import substream


def normal(rng, size):
    return rng.standard_normal(size)


class TestMonteCarloConfig:
    def test_defaults_valid(self):
        cfg = MonteCarloConfig()
        assert cfg.samples >= 1 and cfg.rel_tol > 0

    @pytest.mark.parametrize("kw", [dict(samples=0), dict(rel_tol=0.0), dict(workers=0), dict(seed=-1)])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ValueError):
            MonteCarloConfig(**kw)


class TestMcExpectation:
    def test_constant_integrand(self):
        mean, se = mc_expectation(lambda z: np.full(z.shape, 2.5), normal, MonteCarloConfig(1000))
        assert mean == 2.5 and se == 0.0

    def test_second_moment_of_standard_normal(self):
        mean, se = mc_expectation(lambda z: z * z, normal, MonteCarloConfig(100_000))
        assert abs(mean - 1.0) <= 3 * se

    def test_identical_across_worker_counts(self):
        a = mc_expectation(np.exp, normal, MonteCarloConfig(50_000, workers=1))
        b = mc_expectation(np.exp, normal, MonteCarloConfig(50_000, workers=4))
        assert a == b

    def test_all_nan_raises(self):
        with pytest.raises(NumericalError):
            mc_expectation(lambda z: np.full(z.shape, np.nan), normal, MonteCarloConfig(100))

    def test_standard_error_shrinks_like_root_n(self):
        _, s1 = mc_expectation(lambda z: z, normal, MonteCarloConfig(40_000))
        _, s2 = mc_expectation(lambda z: z, normal, MonteCarloConfig(80_000))
        assert abs(s1 / s2 / math.sqrt(2.0) - 1.0) < 0.2

    def test_same_seed_reproduces(self):
        cfg = MonteCarloConfig(20_000, seed=7)
        assert mc_expectation(np.sin, normal, cfg) == mc_expectation(np.sin, normal, cfg)


class TestGoldenSection:
    def test_quadratic(self):
        x, fx = golden_section_min(lambda x: (x - 0.3) ** 2, 0.0, 1.0, 1e-8)
        assert abs(x - 0.3) < 1e-6 and fx < 1e-12

    def test_symmetric_gaussian_chernoff_integrand(self):
        # log int N(0,1)^l N(2,1)^(1-l) = -2 l (1 - l)
        x, _ = golden_section_min(lambda l: -2.0 * l * (1.0 - l), 0.0, 1.0, 1e-7)
        assert abs(x - 0.5) < 1e-6

    def test_monotone_returns_endpoint(self):
        assert golden_section_min(lambda x: x, 2.0, 5.0, 1e-6)[0] == 2.0
        assert golden_section_min(lambda x: -x, 2.0, 5.0, 1e-6)[0] == 5.0

    def test_non_finite_raises(self):
        with pytest.raises(NumericalError):
            golden_section_min(lambda x: math.nan, 0.0, 1.0)


class TestBisect:
    def test_step(self):
        u = bisect(lambda u: u >= 0.7, 0.0, 1.0, 1e-3)
        assert abs(u - 0.7) <= 1e-3 and u >= 0.7

    def test_crossing_at_hi(self):
        assert bisect(lambda u: u >= 1.0, 0.0, 1.0, 1e-3) == pytest.approx(1.0, abs=1e-3)

    def test_true_at_lo(self):
        assert bisect(lambda u: True, 0.0, 1.0) == 0.0

    def test_constant_false_raises(self):
        with pytest.raises(BracketError):
            bisect(lambda u: False, 0.0, 1.0)

    def test_noisy_predicate_with_common_random_numbers_is_stable(self):
        def run(seed):
            z = substream(seed, 3).standard_normal(2000)
            return bisect(lambda u: np.mean(z <= u) >= 0.5, -3.0, 3.0, 1e-6)
        assert run(11) == run(11)

    @given(st.floats(0.01, 0.99), st.floats(1e-6, 1e-2))
    def test_bracket_contains_crossing(self, c, tol):
        u = bisect(lambda u: u >= c, 0.0, 1.0, tol)
        assert c <= u <= c + tol


class TestQuantile:
    def test_endpoints(self):
        x = [3.0, 1.0, 2.0]
        assert empirical_quantile(x, 0.0) == 1.0 and empirical_quantile(x, 1.0) == 3.0

    def test_type_one_convention(self):
        assert empirical_quantile([1, 2, 3, 4], 0.5) == 2.0

    def test_uniform(self):
        u = substream(5).random(100_000)
        assert abs(empirical_quantile(u, 0.9) - 0.9) < 0.01

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            empirical_quantile([], 0.5)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 1), st.floats(0, 1))
    def test_member_and_monotone(self, xs, p, q):
        lo, hi = sorted((p, q))
        a, b = empirical_quantile(xs, lo), empirical_quantile(xs, hi)
        assert a in xs and b in xs and a <= b


class TestSimplexGrid:
    def test_two_dims(self):
        g = simplex_grid(2, 3)
        assert sorted(map(tuple, g)) == [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]

    def test_vertices_only(self):
        g = simplex_grid(3, 2)
        assert sorted(map(tuple, g)) == sorted(map(tuple, np.eye(3)))

    def test_exhaustive_sums(self):
        g = simplex_grid(4, 6)
        assert len(g) == math.comb(5 + 3, 3)
        assert np.all(g >= 0) and np.allclose(g.sum(axis=1), 1.0, atol=1e-12)

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            simplex_grid(0, 3)
        with pytest.raises(ValueError):
            simplex_grid(2, 1)

    @given(st.integers(1, 5), st.integers(2, 6))
    def test_count_and_vertices(self, dim, res):
        g = simplex_grid(dim, res)
        assert len(g) == math.comb(res - 2 + dim, dim - 1)
        for v in np.eye(dim):
            assert np.any(np.all(g == v, axis=1))
