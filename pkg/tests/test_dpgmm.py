import numpy as np
import pytest
from scipy import stats as sps
from scipy.integrate import trapezoid
from scipy.special import gammaln, logsumexp

from popsel.dpgmm import (
    ALPHA_FLOOR,
    DensityDraws,
    MixtureState,
    NIGHyper,
    density_draws,
    gibbs_sweep,
    inflated_counts,
    init_state,
    mixture_logpdf,
    postprocess_intrinsic,
    run_chain,
    sample_truncated_nig,
)
from popsel.dpgmm import _event_term
from popsel.errors import DomainError
from popsel.likelihood import LikelihoodMode
from popsel.population import PRESETS, GaussianObserved, GaussianSelection, IntrinsicModel, UnitSelection
from popsel.simulate import Catalog, draw_catalog_bernoulli
from popsel.stats import RngStream


def gaussian_catalog(n, mu, sd, sigma_0, seed):
    gen = RngStream(seed, 99).generator()
    x = gen.normal(mu, sd, n)
    return Catalog(x, x + sigma_0 * gen.standard_normal(n), sigma_0, n)


def one_component(mu, sd, noise=0.1):
    return MixtureState(np.zeros(1, dtype=int), np.array([mu]), np.array([sd]), np.ones(1), NIGHyper(0.0), noise)


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for p in set_partitions(rest):
        for i in range(len(p)):
            yield p[:i] + [[first] + p[i]] + p[i + 1:]
        yield [[first]] + p


def partition_key(blocks):
    return tuple(sorted(tuple(sorted(int(i) for i in b)) for b in blocks))


def exact_partition_posterior(n, log_marginal, concentration):
    """Posterior over set partitions: CRP prior times per-block marginal likelihoods."""
    parts = list(set_partitions(list(range(n))))
    lp = np.array([len(p) * np.log(concentration) + sum(gammaln(len(b)) for b in p)
                   + sum(log_marginal(tuple(sorted(b))) for b in p) for p in parts])
    post = np.exp(lp - logsumexp(lp))
    return {partition_key(p): q for p, q in zip(parts, post)}


def sampled_partition_frequencies(cat, sel, hyper, n_sweeps, seed, mode=LikelihoodMode.THRESHOLD_ON_PARAMETERS):
    gen = RngStream(seed).generator()
    state = init_state(cat, gen, hyper=hyper)
    counts = {}
    for it in range(n_sweeps + 500):
        state = gibbs_sweep(state, cat, sel, gen, mode)
        if it >= 500:
            z = state.assignments
            key = partition_key([np.flatnonzero(z == j) for j in range(z.max() + 1)])
            counts[key] = counts.get(key, 0) + 1
    return {k: c / n_sweeps for k, c in counts.items()}


class TestNIG:
    def test_hyper_validation(self):
        for bad in ({"k0": 0.0}, {"a0": 1.0}, {"b0": 0.0}):
            with pytest.raises(DomainError):
                NIGHyper(0.0, **bad)

    def test_empirical_hyper(self):
        y = np.array([1.0, 2.0, 3.0])
        h = NIGHyper.from_data(y)
        assert (h.m0, h.k0, h.a0, h.b0) == (2.0, 0.01, 2.0, pytest.approx(2.0 / 3.0))

    def test_truncated_draws_respect_floor(self):
        gen = RngStream(1).generator()
        mu, v = sample_truncated_nig(0.0, 1.0, 3.0, 2.0, 0.5, gen, size=20_000)
        assert np.all(v > 0.5)
        # compare with rejection sampling from the untruncated law
        prec = gen.gamma(3.0, 1.0 / 2.0, size=200_000)
        ref = 1.0 / prec
        ref = ref[ref > 0.5]
        assert sps.ks_2samp(v, ref).pvalue > 0.01

    def test_posterior_update_counts(self):
        h = NIGHyper(0.0, 1.0, 2.0, 1.0)
        m, k, a, b = h.posterior(4, 1.0, 2.0)
        assert (m, k, a) == (0.8, 5.0, 4.0)
        assert b == pytest.approx(1.0 + 1.0 + 0.5 * 4 / 5)


class TestSweeps:
    def test_inflated_counts(self):
        out, capped = inflated_counts([50], [0.5])
        assert out[0] == 100.0 and capped == 0
        out, capped = inflated_counts([10], [1e-6])
        assert out[0] == pytest.approx(10 / ALPHA_FLOOR) and capped == 1

    def test_unit_selection_matches_plain_kernel(self):
        cat = gaussian_catalog(200, 0.0, 1.0, 0.3, 1)
        a = init_state(cat, RngStream(5))
        b = init_state(cat, RngStream(5))
        ga, gb = RngStream(6).generator(), RngStream(6).generator()
        for _ in range(5):
            a = gibbs_sweep(a, cat, None, ga)
            b = gibbs_sweep(b, cat, UnitSelection(), gb)
        assert np.array_equal(a.assignments, b.assignments)
        assert np.array_equal(a.means, b.means) and np.array_equal(a.weights, b.weights)

    def test_state_invariants(self):
        cat = gaussian_catalog(150, 0.0, 1.0, 0.3, 2)
        sel = GaussianSelection(0.5, 2.0)
        for state in run_chain(cat, 20, RngStream(3), sel=sel):
            state.check()
            assert state.counts.sum() == 150 and state.n_components <= state.k_max
            assert state.weights.sum() == pytest.approx(1.0)

    @pytest.mark.xfail(strict=False, reason=(
        "a single posterior draw; with the prescribed NIG prior the largest component "
        "holds >= 90% of events in only about half of the states (see the exact-partition tests)"))
    def test_single_gaussian_recovery(self):
        cat = gaussian_catalog(500, 0.0, 1.0, 0.1, 3)
        last = run_chain(cat, 500, RngStream(4))[-1]
        j = int(np.argmax(last.counts))
        assert last.counts[j] >= 0.9 * 500
        assert abs(last.means[j]) < 3 * np.sqrt(1.01 / 500)

    @pytest.mark.slow
    def test_single_component_coverage(self):
        inside = 0
        for rep in range(50):
            cat = gaussian_catalog(100, 0.0, 1.0, 0.1, 100 + rep)
            chain = run_chain(cat, 150, RngStream(rep, 1), burn=50)
            mu = np.array([s.means[np.argmax(s.counts)] for s in chain])
            lo, hi = np.quantile(mu, [0.05, 0.95])
            inside += lo <= 0.0 <= hi
        assert inside >= 38

    @pytest.mark.slow
    def test_exchangeability(self):
        grid = np.linspace(-4, 4, 81)
        base, perm = [], []
        for seed in range(30):
            cat = gaussian_catalog(100, 0.0, 1.0, 0.3, 500 + seed)
            order = RngStream(seed, 3).generator().permutation(100)
            shuffled = Catalog(cat.true_values[order], cat.observed_values[order], 0.3, 100)
            for c, out in ((cat, base), (shuffled, perm)):
                d = density_draws(run_chain(c, 60, RngStream(seed, 4), burn=20), grid, 4)
                out.append(d.median[40])
        assert sps.ks_2samp(base, perm).pvalue > 0.01

    def test_empty_or_heteroscedastic(self):
        with pytest.raises(DomainError):
            init_state(Catalog([], [], [], 0), RngStream(0))
        with pytest.raises(DomainError):
            init_state(Catalog([0.0, 1.0], [0.0, 1.0], [1.0, 2.0], 2), RngStream(0))

    def test_reproducible(self):
        cat = gaussian_catalog(100, 0.0, 1.0, 0.3, 8)
        a = run_chain(cat, 10, RngStream(1), sel=GaussianSelection(0, 2))
        b = run_chain(cat, 10, RngStream(1), sel=GaussianSelection(0, 2))
        assert np.array_equal(a[-1].means, b[-1].means)


class TestDensityDraws:
    def test_single_component_render(self):
        grid = np.linspace(-6, 4, 1001)
        d = density_draws([one_component(-1.0, 0.7071067811865476)], grid)
        exact = np.exp(GaussianObserved(-1.0, 0.7071067811865476).logpdf(grid))
        np.testing.assert_allclose(d.densities[0], exact, rtol=1e-6)

    def test_mirrored_components_symmetric(self):
        s = MixtureState(np.array([0, 1]), np.array([-1.5, 2.5]), np.array([0.7, 0.7]), np.array([0.5, 0.5]),
                         NIGHyper(0.0), 0.1)
        x = np.linspace(-3, 3, 301)
        np.testing.assert_allclose(mixture_logpdf(s, 0.5 + x), mixture_logpdf(s, 0.5 - x), atol=1e-12)

    def test_normalised(self):
        cat = gaussian_catalog(200, 0.0, 1.5, 0.3, 9)
        grid = np.linspace(-10, 10, 801)
        d = density_draws(run_chain(cat, 30, RngStream(2)), grid, 3)
        for row in d.densities:
            assert trapezoid(row, grid) == pytest.approx(1.0, abs=1e-6)
        assert np.all(d.p05 <= d.median) and np.all(d.median <= d.p95)

    def test_thin_longer_than_chain(self):
        with pytest.raises(DomainError):
            density_draws([one_component(0, 1)], np.linspace(-1, 1, 5), thin=2)

    def test_postprocess_conjugate(self):
        grid = np.linspace(-7, 5, 2001)
        obs = density_draws([one_component(-1.0, 0.7071067811865476)], grid)
        out = postprocess_intrinsic(obs, GaussianSelection(0.0, 1.0))
        np.testing.assert_allclose(out.densities[0], np.exp(IntrinsicModel(-2.0, 1.0).logpdf(grid)),
                                   rtol=1e-5, atol=1e-12)

    def test_postprocess_unit_identity(self):
        grid = np.linspace(-5, 5, 501)
        obs = density_draws([one_component(0.3, 1.1)], grid)
        np.testing.assert_allclose(postprocess_intrinsic(obs, UnitSelection()).densities, obs.densities, rtol=1e-12)

    @pytest.mark.xfail(strict=False, reason=(
        "pointwise-band coverage of one catalogue; even the exact parametric posterior "
        "reaches 90% of grid points in only about 70% of catalogues"))
    def test_narrow_model_observed_density(self):
        p = PRESETS["narrow"]
        cat = draw_catalog_bernoulli(p.intrinsic(), p.selection(), 1000, 0.3, RngStream(1, 5))
        obs = p.observed()
        grid = np.linspace(obs.mu_obs - 8 * obs.sigma_obs, obs.mu_obs + 8 * obs.sigma_obs, 401)
        d = density_draws(run_chain(cat, 400, RngStream(1, 6), burn=150), grid, 5)
        inner = np.abs(grid - obs.mu_obs) <= 3 * obs.sigma_obs
        true = np.exp(obs.logpdf(grid))
        frac = np.mean((true[inner] >= d.p05[inner]) & (true[inner] <= d.p95[inner]))
        assert frac >= 0.9

    def test_csv(self, tmp_path):
        grid = np.linspace(-2, 2, 11)
        d = DensityDraws(grid, np.vstack([IntrinsicModel(0, 1).logpdf(grid)] * 3))
        d.to_csv(tmp_path / "d.csv", include_draws=True)
        header = (tmp_path / "d.csv").read_text().splitlines()[0]
        assert header == "point,median,p05,p95,draw_0,draw_1,draw_2"


class TestExactPartitionPosterior:
    """The sampled partition distribution against full enumeration on tiny catalogues."""

    def test_plain_kernel(self):
        y = np.array([-1.0, -0.6, 0.2, 1.5, 1.9])
        hyper = NIGHyper(0.0, 0.5, 2.0, 1.0)

        def log_marginal(block):
            v = y[list(block)]
            m, k, a, b = hyper.posterior(v.size, v.mean(), np.sum((v - v.mean()) ** 2))
            return (gammaln(a) - gammaln(hyper.a0) + hyper.a0 * np.log(hyper.b0) - a * np.log(b)
                    + 0.5 * np.log(hyper.k0 / k) - 0.5 * v.size * np.log(2 * np.pi))

        # sigma_0 this small leaves the v > sigma_0**2 truncation without mass
        exact = exact_partition_posterior(5, log_marginal, 1.0)
        freq = sampled_partition_frequencies(Catalog(y, y, 1e-3, 5), None, hyper, 10_000, 1)
        for key, q in exact.items():
            assert abs(freq.get(key, 0.0) - q) < 0.02

    @pytest.mark.slow
    def test_selection_kernel(self):
        y = np.array([-0.8, -0.3, 0.9, 1.6])
        s0 = 0.5
        sel = GaussianSelection(0.5, 1.0)
        hyper = NIGHyper(0.3, 0.5, 2.0, 1.0)
        mode = LikelihoodMode.THRESHOLD_ON_PARAMETERS
        mu = np.linspace(-14, 14, 1401)[:, None]
        log_sigma = np.linspace(-7, 3, 1001)[None, :]
        sigma = np.exp(log_sigma)
        log_prior = hyper.log_density(mu, sigma**2 + s0**2) + np.log(2.0) + 2.0 * log_sigma

        def integrate_2d(log_f):
            top = log_f.max()
            return top + np.log(trapezoid(trapezoid(np.exp(log_f - top), log_sigma[0], axis=1), mu[:, 0]))

        log_norm = integrate_2d(log_prior)
        terms = [_event_term(v, s0, mu, sigma, sel, mode) for v in y]

        def log_marginal(block):
            return integrate_2d(log_prior + sum(terms[i] for i in block)) - log_norm

        exact = exact_partition_posterior(4, log_marginal, 1.0)
        freq = sampled_partition_frequencies(Catalog(y, y, s0, 4), sel, hyper, 8000, 2, mode)
        for key, q in exact.items():
            assert abs(freq.get(key, 0.0) - q) < 0.025
