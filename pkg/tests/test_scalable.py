import math

import numpy as np
import pytest
from scipy import integrate, stats

from secure_estimation import (
    BinaryDetector,
    CoordinateEstimate,
    GaussianMeanShift,
    GaussianPrior,
    GaussianVarianceOnly,
    InverseChiSquaredPrior,
    MarginalLR,
    ModelSpace,
    MonteCarloConfig,
    OptimalBayes,
    PipelineConfig,
    PointMassPrior,
    calibrate_np_threshold,
    calibrate_pipeline,
    calibrate_reliability,
    chernoff_information,
    coordinate_estimate,
    count_density_evaluations,
    empirical_exponent,
    fuse,
    isolate_lr,
    isolate_optimal,
    np_detect,
    posterior_cost,
    predicted_exponent,
    scalable_pipeline,
)
from secure_estimation.model import sample_stack
from secure_estimation.numerics import substream
from secure_estimation.scalable import (
    CalibratedPipeline,
    InfeasibleTargetError,
    InsufficientSamplesError,
    NoReliableEstimate,
    ReliabilityTest,
    UnsupportedModelError,
    _calibration_draws,
    coordinate_model,
    evaluate_pipeline,
    fit_exponent,
    isolation_error_rate,
    log_likelihood_ratio,
)

from .conftest import case1_model, case2_model, case3_model, reference_model
from .oracles import equal_mean_gaussian_chernoff


def attack_free_rate(model, det, N, seed):
    _, Y = sample_stack(model, 0, substream(seed), N)
    return float(np.mean(np_detect(model, Y, det)))


class TestDetection:
    def test_zero_threshold_always_alarms(self, conjugate):
        _, Y = sample_stack(conjugate, 0, substream(1), 1000)
        assert np.all(np_detect(conjugate, Y, BinaryDetector(0.0)))
        assert np_detect(conjugate, Y[0], BinaryDetector(0.0)) is True

    def test_calibration_hits_target(self, conjugate):
        det = calibrate_np_threshold(conjugate, 0.1, MonteCarloConfig(20_000, seed=2))
        assert abs(attack_free_rate(conjugate, det, 100_000, 3) - 0.1) <= 0.01
        assert det.rho == 0.0

    def test_alpha_near_one(self, conjugate):
        det = calibrate_np_threshold(conjugate, 0.99, MonteCarloConfig(20_000, seed=2))
        assert attack_free_rate(conjugate, det, 20_000, 3) > 0.97

    def test_identical_models_randomise(self):
        g = GaussianMeanShift()
        m = ModelSpace.build([g], [g], GaussianPrior(), 1, eps0=0.5)
        det = calibrate_np_threshold(m, 0.2, MonteCarloConfig(2000))
        assert det.rho == pytest.approx(0.2)
        _, Y = sample_stack(m, 0, substream(4), 50_000)
        rate = np.mean(np_detect(m, Y, det, rng=substream(5)))
        assert abs(rate - 0.2) <= 4 * math.sqrt(0.16 / 50_000)

    def test_insufficient_samples(self, conjugate):
        with pytest.raises(InsufficientSamplesError):
            calibrate_np_threshold(conjugate, 0.01, MonteCarloConfig(5000))

    def test_np_optimality_sweep(self):
        m = case1_model()
        det = calibrate_np_threshold(m, 0.1, MonteCarloConfig(20_000, seed=6))
        N = 20_000
        _, Y0 = sample_stack(m, 0, substream(7), N)
        _, Y1 = sample_stack(m, 1, substream(8), N)
        fa = np.mean(np_detect(m, Y0, det))
        miss = 1.0 - np.mean(np_detect(m, Y1, det))
        se = math.sqrt(miss * (1 - miss) / N)
        # competing statistics: the likelihood ratio itself, the raw first coordinate and its magnitude
        stats_ = [log_likelihood_ratio, lambda m_, Y: Y[:, 0, 0], lambda m_, Y: np.abs(Y[:, 0, 0] - Y[:, 0, 1] / 4)]
        for s in stats_:
            s0, s1 = s(m, Y0), s(m, Y1)
            for t in np.quantile(s0, np.linspace(0.5, 0.999, 50)):
                if np.mean(s0 > t) <= fa:
                    assert np.mean(s1 <= t) >= miss - 2 * math.sqrt(2) * se


class TestIsolation:
    def test_single_scenario(self, conjugate):
        _, Y = sample_stack(conjugate, 1, substream(1), 20)
        assert np.all(isolate_optimal(conjugate, Y) == 1)
        assert np.all(isolate_lr(conjugate, Y) == 1)
        assert isolate_lr(conjugate, Y[0]) == 1

    def test_consistent_for_large_n(self):
        m = case3_model(50, eps0=0.2)
        for rule in (OptimalBayes(), MarginalLR()):
            err, tot = isolation_error_rate(m, rule, 2000, seed=3)
            assert err / tot < 0.01

    def test_matches_direct_posterior(self):
        m = case2_model(n=2)
        prior = stats.uniform(-2, 4)
        rng = substream(12)
        for _ in range(30):
            i = int(rng.integers(1, 3))
            _, Y = sample_stack(m, i, rng, 1)
            post = []
            for j in (1, 2):
                fams = m.families(j)
                like = lambda x, fams=fams: math.exp(sum(float(np.sum(f.logpdf(Y[0, :, l], x)))
                                                         for l, f in enumerate(fams)))
                post.append(m.attack_weights[j - 1] * integrate.quad(lambda x: like(x) * prior.pdf(x), -2, 2)[0])
            assert isolate_optimal(m, Y[0]) == 1 + int(np.argmax(post))

    def test_point_mass_rules_coincide(self):
        g0 = [GaussianMeanShift(1.0, 1.0), GaussianMeanShift(2.0, 1.0), GaussianMeanShift(1.0, 2.0)]
        g1 = [GaussianMeanShift(1.0, 5.0), GaussianMeanShift(2.0, 5.0, 1.0), GaussianMeanShift(1.0, 4.0)]
        m = ModelSpace.build(g0, g1, PointMassPrior(0.7), 3, K=2, eps0=0.4)
        _, Y = sample_stack(m, 4, substream(2), 300)
        assert np.array_equal(isolate_optimal(m, Y, posteriors=[1.0] * m.T), isolate_lr(m, Y))

    def test_sandwich_on_point_mass(self):
        g0 = [GaussianMeanShift(1.0, 1.0), GaussianMeanShift(1.0, 1.0)]
        g1 = [GaussianMeanShift(1.0, 3.0), GaussianMeanShift(1.0, 3.0)]
        x0 = 0.4
        m = ModelSpace.build(g0, g1, PointMassPrior(x0), 2, eps0=0.2, scenario_priors=[0.2, 0.6])

        def genie(model, Y):
            # MAP with the true parameter supplied directly
            scores = []
            for i in (1, 2):
                ll = sum(f.logpdf(Y[:, :, l], x0).sum(axis=1) for l, f in enumerate(model.families(i)))
                scores.append(ll + math.log(model.attack_weights[i - 1]))
            return 1 + np.argmax(np.stack(scores, axis=1), axis=1)

        class Genie:
            def select(self, model, Y):
                return genie(model, Y)

        N = 40_000
        rates = [isolation_error_rate(m, r, N, seed=9)[0] / N for r in (Genie(), OptimalBayes(), MarginalLR())]
        se = [math.sqrt(p * (1 - p) / N) for p in rates]
        assert rates[0] <= rates[1] + 2 * math.hypot(se[0], se[1])
        assert rates[1] <= rates[2] + 2 * math.hypot(se[1], se[2])

    def test_disagreement_vanishes(self):
        dis = []
        for n in (1, 5, 10, 20):
            m = case3_model(n, eps0=0.2)
            _, Y = sample_stack(m, 2, substream(13, n), 3000)
            dis.append(np.mean(isolate_optimal(m, Y) != isolate_lr(m, Y)))
        assert dis[-1] < dis[0]
        assert dis[-1] < 0.01


class TestChernoff:
    def test_identical(self):
        assert chernoff_information(stats.norm(0, 1).logpdf, stats.norm(0, 1).logpdf) == pytest.approx(0.0, abs=1e-9)

    def test_equal_variance(self):
        val = chernoff_information(stats.norm(0, 1).logpdf, stats.norm(2, 1).logpdf, center=(0.0, 2.0))
        assert val == pytest.approx(0.5, rel=1e-6)

    def test_equal_mean(self):
        want = equal_mean_gaussian_chernoff(2.0, 6.0)
        assert want == pytest.approx(0.0742, abs=5e-4)
        val = chernoff_information(stats.norm(0, math.sqrt(2)).logpdf, stats.norm(0, math.sqrt(6)).logpdf)
        assert val == pytest.approx(want, rel=1e-6)

    def test_disjoint_supports(self):
        lg = lambda y: 0.0 if 0 <= y <= 1 else -math.inf
        lh = lambda y: 0.0 if 2 <= y <= 3 else -math.inf
        assert chernoff_information(lg, lh, support=(-1.0, 4.0), center=(0.5, 2.5)) == math.inf


class TestPredictedExponent:
    def test_identical_scenarios(self):
        g = [GaussianMeanShift(1.0, 1.0), GaussianMeanShift(2.0, 1.0)]
        m = ModelSpace.build(g, g, GaussianPrior(), 1, eps0=0.2)
        assert predicted_exponent(m) == pytest.approx(0.0, abs=1e-9)

    def test_two_term_pair_structure(self):
        # each ordered pair differs in both coordinates, one term per direction
        def log_coeff(lam, va, vb):
            return (-lam * 0.5 * math.log(va) - (1 - lam) * 0.5 * math.log(vb)
                    - 0.5 * math.log(lam / va + (1 - lam) / vb))
        lam = np.linspace(1e-6, 1 - 1e-6, 20001)
        want = max(-(log_coeff(x, 6.0, 2.0) + log_coeff(x, 2.0, 6.0)) for x in lam)
        assert predicted_exponent(case3_model()) == pytest.approx(want, rel=1e-6)

    def test_unsupported_families(self):
        m = ModelSpace.build([GaussianVarianceOnly(0.0), GaussianVarianceOnly(0.0)],
                             [GaussianVarianceOnly(1.0), GaussianVarianceOnly(1.0)],
                             InverseChiSquaredPrior(), 1, eps0=0.2)
        with pytest.raises(UnsupportedModelError):
            predicted_exponent(m)
        m = ModelSpace.build([GaussianMeanShift(1.0), GaussianMeanShift(1.0)],
                             [GaussianMeanShift(2.0), GaussianMeanShift(1.0)], GaussianPrior(), 1, eps0=0.2)
        with pytest.raises(UnsupportedModelError):
            predicted_exponent(m)

    def test_single_scenario(self, conjugate):
        assert predicted_exponent(conjugate) == math.inf


class TestEmpiricalExponent:
    def test_fit_recovers_rate(self):
        n = np.arange(1, 21)
        p = 0.3 * n ** -0.5 * np.exp(-0.2 * n)
        slope, _, _ = fit_exponent(n, p, 10 ** 6)
        assert slope == pytest.approx(0.2, rel=1e-9)

    def test_identical_scenarios_flat(self):
        g = [GaussianMeanShift(1.0, 1.0), GaussianMeanShift(2.0, 1.0)]
        m = ModelSpace.build(g, g, GaussianPrior(), 1, eps0=0.0)
        rep = empirical_exponent(m, OptimalBayes(), (1, 2, 4, 8), 4000, seed=1)
        assert abs(rep.slope) <= 3 * rep.slope_se
        assert rep.predicted == pytest.approx(0.0, abs=1e-9)

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            empirical_exponent(case3_model(), OptimalBayes(), (1, 2), 100, seed=1)

    def test_drops_error_free_sizes(self):
        rep = empirical_exponent(case3_model(), MarginalLR(), (1, 2, 3, 80), 300, seed=2)
        assert 80 in rep.dropped

    def test_deterministic_across_workers(self):
        m = case3_model()
        a = empirical_exponent(m, MarginalLR(), (1, 2, 3), 20_000, seed=4, workers=1)
        b = empirical_exponent(m, MarginalLR(), (1, 2, 3), 20_000, seed=4, workers=2)
        assert a == b


class TestCoordinateEstimate:
    def test_point_mass(self):
        m = ModelSpace.build([GaussianMeanShift()], [GaussianMeanShift(1.0, 2.0)], PointMassPrior(0.3), 2,
                             eps0=0.5)
        e = coordinate_estimate(m, 0, 1, [1.0, 2.0])
        assert (e.estimate, e.posterior_cost) == (0.3, 0.0)

    def test_conjugate_mean(self):
        m = case3_model(3)
        y = np.array([1.0, -2.0, 4.5])
        h, v, s2 = 4.0, 6.0, 4.0
        e = coordinate_estimate(m, 1, 1, y)
        assert e.estimate == pytest.approx(h * s2 * y.sum() / (3 * h * h * s2 + v), rel=1e-12)
        assert e.posterior_cost == pytest.approx(s2 * v / (3 * h * h * s2 + v), rel=1e-12)

    def test_matches_posterior_cost(self):
        m = reference_model(2)
        y = np.array([0.4, 3.1])
        for j in (0, 1):
            e = coordinate_estimate(m, 1, j, y)
            want = posterior_cost(coordinate_model(m, 1), j, e.estimate, y[:, None])[0]
            assert e.posterior_cost == pytest.approx(want, rel=1e-9)

    def test_reliability_flag(self):
        m = case3_model(1)
        t = ReliabilityTest(0, 0, 0.5, 1.0, threshold=0.1)
        assert coordinate_estimate(m, 0, 0, [1.0], test=t).reliable is False


class TestFuse:
    def test_single(self):
        assert fuse([CoordinateEstimate(0, 0, 1.234, 0.5)]) == 1.234

    def test_equal_costs(self):
        assert fuse([CoordinateEstimate(0, 0, 1.0, 2.0), CoordinateEstimate(1, 0, 3.0, 2.0)]) == pytest.approx(2.0)

    def test_inverse_cost_weights(self):
        assert fuse([CoordinateEstimate(0, 0, 0.0, 1.0), CoordinateEstimate(1, 1, 4.0, 3.0)]) == pytest.approx(1.0)

    def test_unreliable_ignored(self):
        ests = [CoordinateEstimate(0, 0, 0.0, 1.0, False), CoordinateEstimate(1, 1, 4.0, 3.0)]
        assert fuse(ests) == 4.0
        with pytest.raises(NoReliableEstimate):
            fuse(ests[:1])


@pytest.fixture(scope="module")
def reference_calibration():
    m = reference_model()
    cfg = PipelineConfig(0.1, ((0.2, 0.5), (0.2, 0.5)))
    mc = MonteCarloConfig(20_000, seed=3)
    return m, cfg, mc, calibrate_pipeline(m, cfg, mc)


class TestReliability:
    def test_full_target_keeps_all(self, reference_calibration):
        m, cfg, mc, cal = reference_calibration
        cache = _calibration_draws(m, cfg, cal.detector, mc)
        rho = cal.tests[0][1].rho
        t = calibrate_reliability(m, 0, 1, rho, mc, cal.detector, cfg, cache)
        truth, B, c = cache
        good = (truth[:, 0] == 1) & (B[:, 0] == 1)
        assert t.threshold == pytest.approx(c[good, 0].max())
        assert np.all(t.accepts(c[good, 0]))

    def test_infeasible_target(self, reference_calibration):
        m, cfg, mc, cal = reference_calibration
        rho = cal.tests[1][1].rho
        with pytest.raises(InfeasibleTargetError) as info:
            calibrate_reliability(m, 1, 1, min(rho + 0.05, 1.0), mc, cal.detector, cfg)
        assert info.value.rho == pytest.approx(rho)

    def test_retention_on_fresh_data(self, reference_calibration):
        m, cfg, _, cal = reference_calibration
        ev = evaluate_pipeline(m, cal, 1.0, MonteCarloConfig(20_000, seed=11))
        N = 20_000
        for l in range(2):
            for j in (0, 1):
                nu = cfg.nu[l][j]
                # branch j occupies about half of the draws at each coordinate
                se = math.sqrt(nu * (1 - nu) / (0.4 * N))
                assert abs(ev.retention[l, j] - nu) <= 2 * se + 0.005

    def test_filter_lowers_cost(self, reference_calibration):
        m, cfg, mc, cal = reference_calibration
        truth, B, c = _calibration_draws(m, cfg, cal.detector, MonteCarloConfig(10_000, seed=12))
        for l in range(2):
            for j in (0, 1):
                on = B[:, l] == j
                kept = cal.tests[l][j].accepts(c[on, l], substream(13, l, j).random(on.sum()))
                assert kept.any()
                assert c[on, l][kept].mean() <= c[on, l].mean() + 1e-12


def synthetic(m, n=3):
    g0 = [GaussianMeanShift(1.0 + 0.1 * l, 1.0) for l in range(m)]
    g1 = [GaussianMeanShift(1.0 + 0.1 * l, 4.0) for l in range(m)]
    return ModelSpace.build(g0, g1, GaussianPrior(0.0, 2.0), n, eps0=0.3)


def open_pipeline(model):
    tests = tuple(tuple(ReliabilityTest(l, j, 1.0, 1.0, math.inf) for j in (0, 1)) for l in range(model.m))
    cfg = PipelineConfig(0.1, tuple((1.0, 1.0) for _ in range(model.m)))
    return CalibratedPipeline(cfg, BinaryDetector(0.0), tests, np.ones((model.m, 2)))


class TestPipeline:
    def test_attack_free_happy_path(self):
        m = case3_model(2, eps0=0.3)
        tests = tuple(tuple(ReliabilityTest(l, j, 1.0, 1.0, math.inf) for j in (0, 1)) for l in range(2))
        cal = CalibratedPipeline(PipelineConfig(0.1, ((1, 1), (1, 1))), BinaryDetector(math.inf), tests,
                                 np.ones((2, 2)))
        _, Y = sample_stack(m, 0, substream(1), 1)
        x, trace = scalable_pipeline(m, Y[0], cal)
        assert not trace.attack and trace.scenario == 0 and not trace.fallback
        assert all(e.branch == 0 and e.reliable for e in trace.estimates)
        assert x == pytest.approx(fuse(trace.estimates), rel=1e-12)
        for e in trace.estimates:
            want = coordinate_estimate(m, e.coordinate, 0, Y[0, :, e.coordinate])
            assert e.estimate == pytest.approx(want.estimate, rel=1e-12)

    def test_fallback_to_prior_mean(self):
        m = case3_model(2, eps0=0.3)
        tests = tuple(tuple(ReliabilityTest(l, j, 1.0, 1.0, 0.0, 0.0) for j in (0, 1)) for l in range(2))
        cal = CalibratedPipeline(PipelineConfig(0.1, ((1, 1), (1, 1))), BinaryDetector(0.0), tests,
                                 np.ones((2, 2)))
        _, Y = sample_stack(m, 1, substream(2), 1)
        x, trace = scalable_pipeline(m, Y[0], cal)
        assert trace.fallback and x == 0.0

    def test_density_count_linear_in_m(self):
        counts = []
        for m in (2, 4, 8):
            model = synthetic(m)
            _, Y = sample_stack(model, 1, substream(3), 1)
            counts.append(scalable_pipeline(model, Y[0], open_pipeline(model))[1].density_evaluations)
        assert counts[1] == 2 * counts[0] and counts[2] == 2 * counts[1]

    def test_isolation_complexity(self):
        lr, opt = [], []
        for m in (2, 4, 8):
            model = ModelSpace.build(synthetic(m).attack_free, synthetic(m).compromised, GaussianPrior(), 3,
                                     K=2, eps0=0.3)
            _, Y = sample_stack(model, 1, substream(4), 1)
            with count_density_evaluations() as a:
                isolate_lr(model, Y)
            with count_density_evaluations() as b:
                isolate_optimal(model, Y)
            lr.append(a[0])
            opt.append(b[0])
        assert lr[1] == 2 * lr[0] and lr[2] == 2 * lr[1]
        assert opt[2] / opt[1] > 4 * lr[2] / lr[1] / 2

    def test_calibration_mismatch(self):
        with pytest.raises(ValueError):
            calibrate_pipeline(reference_model(), PipelineConfig(0.1, ((0.2, 0.5),)), MonteCarloConfig(2000))
