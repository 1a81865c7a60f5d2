import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from popsel.errors import DomainError
from popsel.sampler import PosteriorSamples, SamplerConfig
from popsel.stats import RngStream
from popsel.validate import (
    PPResult,
    band_coverage,
    beta_credible_band,
    jensen_shannon,
    ks_uniformity_test,
    percentile_of_truth,
    run_pp_trials,
    truth_in_credible_region,
    z_scores,
)

NAMES = ("mu_lambda", "sigma_lambda")
FAST = SamplerConfig(n_walkers=16, n_steps=1500, ess_floor=200.0)


def samples_from(draws, names=NAMES):
    draws = np.asarray(draws, dtype=float)
    return PosteriorSamples(names, draws, np.zeros(draws.shape[0]))


class TestPercentileOfTruth:
    def test_all_below(self):
        s = samples_from(np.column_stack([np.linspace(0, 1, 200), np.linspace(1, 2, 200)]))
        assert percentile_of_truth(s, {"mu_lambda": 5.0, "sigma_lambda": 5.0}) == {
            "mu_lambda": 1.0, "sigma_lambda": 1.0}

    def test_symmetric_about_truth(self, gen):
        x = gen.standard_normal(4000)
        s = samples_from(np.column_stack([x, -x]))
        p = percentile_of_truth(s, {"mu_lambda": 0.0, "sigma_lambda": 0.0})
        for v in p.values():
            assert abs(v - 0.5) < 3 / np.sqrt(4000)

    def test_low_side(self):
        s = samples_from(np.column_stack([np.linspace(0, 1, 200)] * 2))
        assert percentile_of_truth(s, {"mu_lambda": -1.0, "sigma_lambda": -1.0})["mu_lambda"] == 0.0

    def test_name_mismatch(self):
        s = samples_from(np.zeros((200, 2)))
        with pytest.raises(DomainError):
            percentile_of_truth(s, {"mu_obs": 0.0, "sigma_obs": 1.0})

    def test_too_few_draws(self):
        with pytest.raises(DomainError):
            percentile_of_truth(samples_from(np.zeros((99, 2))), {"mu_lambda": 0.0, "sigma_lambda": 1.0})

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t=st.floats(-2, 2), scale=st.floats(0.1, 5))
    def test_monotone_reparameterisation(self, seed, t, scale):
        x = np.random.default_rng(seed).standard_normal((300, 2))
        truth = {"mu_lambda": t, "sigma_lambda": -t}
        base = percentile_of_truth(samples_from(x), truth)
        g = lambda v: np.exp(scale * np.asarray(v)) + v  # noqa: E731  strictly increasing
        moved = percentile_of_truth(samples_from(g(x)), {k: float(g(v)) for k, v in truth.items()})
        assert moved == base


class TestZScores:
    def test_standardised(self):
        x = np.column_stack([np.arange(101.0), np.arange(101.0)])
        z = z_scores(samples_from(x), {"mu_lambda": 50.0, "sigma_lambda": 50.0 + x[:, 1].std(ddof=1)})
        assert z["mu_lambda"] == pytest.approx(0.0)
        assert z["sigma_lambda"] == pytest.approx(1.0)


class TestBetaBand:
    def test_single_trial(self):
        lo, hi = beta_credible_band(1, 0.9)
        assert lo[0] == pytest.approx(0.05)
        assert hi[0] == pytest.approx(0.95)

    def test_median_rank_width(self):
        lo, hi = beta_credible_band(100, 0.9)
        # 0.16297: Beta(50, 51) 5% and 95% quantiles by direct integration of the density
        assert hi[49] - lo[49] == pytest.approx(0.16297, abs=5e-4)
        assert 0.5 * (hi[49] + lo[49]) == pytest.approx(0.5, abs=0.01)

    def test_level_to_one(self):
        bands = [beta_credible_band(5, level) for level in (0.9, 0.99, 1 - 1e-6, 1 - 1e-15)]
        for (lo_a, hi_a), (lo_b, hi_b) in zip(bands, bands[1:]):
            assert np.all(lo_b < lo_a) and np.all(hi_b > hi_a)
        lo, hi = bands[-1]
        assert np.all(lo < 1e-3) and np.all(hi > 1 - 1e-3)

    @pytest.mark.parametrize("level", [0.0, 1.0, -0.1, 1.5])
    def test_bad_level(self, level):
        with pytest.raises(DomainError):
            beta_credible_band(10, level)

    def test_grid_is_inside(self):
        n = 100
        assert band_coverage(np.arange(1, n + 1) / (n + 1)) == 1.0

    def test_concentrated_is_outside(self):
        assert band_coverage(np.full(100, 0.5)) < 0.2


class TestKS:
    @pytest.mark.parametrize("n", [10, 50, 200])
    def test_uniform_grid(self, n):
        stat, p = ks_uniformity_test(np.arange(1, n + 1) / (n + 1))
        assert stat == pytest.approx(1 / (n + 1))
        assert p > 0.99

    @pytest.mark.parametrize("n", [
        pytest.param(20, marks=pytest.mark.xfail(strict=True, reason=(
            "D = 0.5 at n = 20 has p near 9e-5 under both the exact and asymptotic laws"))),
        40, 100])
    def test_concentrated(self, n):
        assert ks_uniformity_test(np.full(n, 0.5))[1] < 1e-6

    def test_calibration(self, stream):
        gen = stream.generator()
        passes = sum(ks_uniformity_test(gen.uniform(size=100))[1] > 0.01 for _ in range(100))
        assert passes >= 98

    @pytest.mark.parametrize("values", [np.linspace(-0.1, 1, 20), np.linspace(0, 1.1, 20), np.full(5, 0.3)])
    def test_domain(self, values):
        with pytest.raises(DomainError):
            ks_uniformity_test(values)


class TestCredibleRegion:
    def test_centre_inside_far_point_outside(self, gen):
        s = samples_from(gen.standard_normal((4000, 2)))
        assert truth_in_credible_region(s, {"mu_lambda": 0.0, "sigma_lambda": 0.0})
        assert not truth_in_credible_region(s, {"mu_lambda": 3.0, "sigma_lambda": 3.0})

    def test_region_level(self, gen):
        # for a bivariate normal the 90% HPD region is r^2 < chi2_2(0.9)
        s = samples_from(gen.standard_normal((4000, 2)))
        r = np.sqrt(sps.chi2.ppf(0.9, 2))
        assert truth_in_credible_region(s, {"mu_lambda": 0.8 * r / np.sqrt(2), "sigma_lambda": 0.8 * r / np.sqrt(2)})
        assert not truth_in_credible_region(s, {"mu_lambda": 1.2 * r / np.sqrt(2), "sigma_lambda": 1.2 * r / np.sqrt(2)})


class TestJensenShannon:
    x = np.linspace(-10, 10, 2001)

    def test_identical(self):
        p = sps.norm.pdf(self.x)
        assert jensen_shannon(p, p, self.x) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_limit(self):
        p = sps.norm.pdf(self.x, -6, 0.3)
        q = sps.norm.pdf(self.x, 6, 0.3)
        assert jensen_shannon(p, q, self.x) == pytest.approx(np.log(2), rel=1e-6)

    def test_symmetric(self):
        p, q = sps.norm.pdf(self.x), sps.norm.pdf(self.x, 0.5, 1.3)
        assert jensen_shannon(p, q, self.x) == pytest.approx(jensen_shannon(q, p, self.x))


class TestPPResult:
    def make(self):
        u = (np.arange(20) + 0.5) / 20
        return PPResult("wide", "post-processing", 100, 3, list(range(20)),
                        {"mu_lambda": list(u), "sigma_lambda": list(u[::-1])})

    def test_summary(self):
        s = self.make().summary()
        assert s["passed"]
        assert s["n_completed"] == 20
        assert set(s["parameters"]) == set(NAMES)

    def test_excluded_fraction_fails(self):
        r = self.make()
        r.excluded = [20, 21]
        assert r.excluded_fraction == pytest.approx(2 / 22)
        assert not r.passed

    def test_csv(self, tmp_path):
        path = tmp_path / "pp.csv"
        self.make().to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "trial,parameter,percentile"
        assert len(lines) == 41
        meta = json.loads((tmp_path / "pp.meta.json").read_text())
        assert meta["n_excluded"] == 0


class TestRunPPTrials:
    @pytest.mark.parametrize("kwargs", [dict(model="nope"), dict(pipeline="nope"), dict(n_trials=9)])
    def test_domain(self, kwargs):
        args = dict(model="wide", n_trials=10, n_events=100, pipeline="post-processing")
        args.update(kwargs)
        with pytest.raises(DomainError):
            run_pp_trials(**args, config=FAST)

    def test_reproducible(self):
        a = run_pp_trials("narrow", 10, 200, "in-likelihood", seed=5, config=FAST)
        b = run_pp_trials("narrow", 10, 200, "in-likelihood", seed=5, config=FAST)
        assert a.percentiles == b.percentiles
        assert a.trials == b.trials
        assert all(0 <= v <= 1 for vals in a.percentiles.values() for v in vals)

    def test_parallel_matches_serial(self):
        a = run_pp_trials("wide", 10, 200, seed=8, config=FAST, n_jobs=1)
        b = run_pp_trials("wide", 10, 200, seed=8, config=FAST, n_jobs=2)
        assert a.percentiles == b.percentiles

    @pytest.mark.slow
    def test_pipelines_indistinguishable(self):
        # the two routes share catalogues trial by trial, so their percentiles should agree in law
        a = run_pp_trials("equal", 40, 500, "post-processing", seed=11, config=FAST)
        b = run_pp_trials("equal", 40, 500, "in-likelihood", seed=11, config=FAST)
        for name in NAMES:
            assert sps.ks_2samp(a.percentiles[name], b.percentiles[name]).pvalue > 0.01
