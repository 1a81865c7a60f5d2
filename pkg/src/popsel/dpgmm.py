"""Dirichlet-process Gaussian mixture for noisy one-dimensional data.

Events carry Gaussian measurement noise of known common width ``sigma_0``.
A component ``(mu_j, sigma_j)`` therefore explains an event through the
convolved width ``sqrt(sigma_j**2 + sigma_0**2)``; the component prior is
Normal-Inverse-Gamma on ``(mu_j, v_j = sigma_j**2 + sigma_0**2)`` truncated
to ``v_j > sigma_0**2``, which keeps the update conjugate.

One Gibbs sweep:

1. reassigns every event among the occupied components and freshly drawn
   auxiliary components (weights ``N_j`` and ``a``);
2. redraws each component's parameters;
3. redraws mixture weights from ``Dirichlet(N + a/K)``.

With a selection function, steps 2 and 3 change: each event term is
divided by ``alpha(mu_j, sigma_j)``, which breaks conjugacy, so step 2 is
a random-walk Metropolis update on ``(mu_j, log sigma_j)``; and the
Dirichlet counts become ``N_j / alpha(mu_j, sigma_j)``. The mixture then
describes the intrinsic distribution directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from . import io
from .errors import DomainError
from .likelihood import LikelihoodMode, _norm_logpdf, _selected_marginal
from .population import DensityGrid, intrinsic_from_observed_grid, is_unit_selection
from .stats import as_generator, dirichlet_sample

K_MAX = 50
ALPHA_FLOOR = 1e-3
N_AUXILIARY = 3
MH_STEPS = 20


@dataclass(frozen=True)
class NIGHyper:
    """Normal-Inverse-Gamma prior: ``v ~ IG(a0, b0)``, ``mu | v ~ N(m0, sqrt(v / k0))``."""

    m0: float
    k0: float = 0.01
    a0: float = 2.0
    b0: float = 1.0

    def __post_init__(self):
        if not (self.k0 > 0 and self.a0 > 1 and self.b0 > 0):
            raise DomainError("NIG hyperparameters need k0 > 0, a0 > 1, b0 > 0")

    @classmethod
    def from_data(cls, observed, k0=0.01, a0=2.0):
        """Empirical prior centred on the sample mean, scaled by the sample variance."""
        observed = np.asarray(observed, dtype=float)
        return cls(float(observed.mean()), k0, a0, float(max(observed.var(), 1e-12)))

    def posterior(self, n, mean, sumsq):
        """Updated ``(m, k, a, b)`` after ``n`` values with the given mean and centred sum of squares."""
        if n == 0:
            return self.m0, self.k0, self.a0, self.b0
        k = self.k0 + n
        m = (self.k0 * self.m0 + n * mean) / k
        a = self.a0 + 0.5 * n
        b = self.b0 + 0.5 * sumsq + 0.5 * self.k0 * n * (mean - self.m0) ** 2 / k
        return m, k, a, b

    def log_density(self, mu, v):
        """Unnormalised log NIG density of ``(mu, v)``."""
        return (-(self.a0 + 1.0) * np.log(v) - self.b0 / v
                - 0.5 * np.log(v / self.k0) - 0.5 * self.k0 * (mu - self.m0) ** 2 / v)


def sample_truncated_nig(m, k, a, b, v_min, gen, size=None):
    """Draw ``(mu, v)`` from NIG(m, k, a, b) restricted to ``v > v_min``.

    ``1/v`` is Gamma(a, rate b) restricted to ``(0, 1/v_min)`` and is drawn
    by inverting its CDF.
    """
    upper = special.gammainc(a, b / v_min) if v_min > 0 else 1.0
    u = gen.uniform(size=size) * upper * (1.0 - 1e-12)
    precision = special.gammaincinv(a, u) / b
    v = 1.0 / precision
    mu = m + np.sqrt(v / k) * gen.standard_normal(size=size)
    return mu, v


@dataclass
class MixtureState:
    """Occupied components of the mixture and the event labels.

    Labels are contiguous, ``0 .. K-1``; every component holds at least
    one event.
    """

    assignments: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    weights: np.ndarray
    hyper: NIGHyper
    noise_sd: float
    concentration: float = 1.0
    k_max: int = K_MAX
    n_capped: int = 0

    @property
    def n_components(self):
        return self.means.size

    @property
    def counts(self):
        return np.bincount(self.assignments, minlength=self.n_components)

    def check(self):
        counts = self.counts
        if counts.sum() != self.assignments.size or np.any(counts < 1):
            raise DomainError("every component must hold at least one event")
        if np.any(self.sds <= 0):
            raise DomainError("component widths must be positive")
        if not (self.means.size == self.sds.size == self.weights.size):
            raise DomainError("component arrays disagree in length")


def _observed(cat):
    if len(cat) == 0:
        raise DomainError("cannot fit a mixture to an empty catalogue")
    if not cat.is_homoscedastic:
        raise DomainError("the mixture sampler needs a common noise width")
    return cat.observed_values, float(cat.noise_sd[0])


def init_state(cat, rng, hyper=None, concentration=1.0, k_max=K_MAX):
    """Single component holding every event, parameters from the conjugate update."""
    y, s0 = _observed(cat)
    gen = as_generator(rng)
    hyper = hyper or NIGHyper.from_data(y)
    m, k, a, b = hyper.posterior(y.size, y.mean(), np.sum((y - y.mean()) ** 2))
    mu, v = sample_truncated_nig(m, k, a, b, s0**2, gen)
    return MixtureState(np.zeros(y.size, dtype=int), np.array([mu]), np.array([np.sqrt(v - s0**2)]),
                        np.ones(1), hyper, s0, concentration, k_max)


def _event_term(y, s0, mu, sigma, sel, mode):
    """log p(y | component, detected), without the alpha normalisation when it cancels."""
    if is_unit_selection(sel) or mode is LikelihoodMode.THRESHOLD_ON_DATA:
        return _norm_logpdf(y, mu, np.sqrt(sigma**2 + s0**2))
    return _selected_marginal(sel, y, s0, mu, sigma) - sel.log_alpha(mu, sigma)


def _component_log_target(mu, log_sigma, y, s0, hyper, sel, mode):
    """Log conditional of one component's parameters under selection."""
    sigma = np.exp(log_sigma)
    v = sigma**2 + s0**2
    # Jacobian of v -> log sigma
    log_prior = hyper.log_density(mu, v) + np.log(2.0) + 2.0 * log_sigma
    if mode is LikelihoodMode.THRESHOLD_ON_DATA:
        terms = _norm_logpdf(y, mu, np.sqrt(v))
    else:
        terms = _selected_marginal(sel, y, s0, mu, sigma)
    return log_prior + np.sum(terms) - y.size * sel.log_alpha(mu, sigma)


def _reassign(state, y, sel, mode, gen):
    s0 = state.noise_sd
    a = state.concentration
    z = state.assignments.copy()
    counts = list(state.counts)
    means = list(state.means)
    sds = list(state.sds)
    log_a_aux = np.log(a / N_AUXILIARY)
    h = state.hyper
    all_mu, all_v = sample_truncated_nig(h.m0, h.k0, h.a0, h.b0, s0**2, gen, size=(y.size, N_AUXILIARY))
    all_sd = np.sqrt(all_v - s0**2)
    gumbel = gen.gumbel(size=(y.size, state.k_max + N_AUXILIARY))
    for i in range(y.size):
        j = z[i]
        counts[j] -= 1
        aux_mu, aux_sd = all_mu[i], all_sd[i]
        if counts[j] == 0:
            # a vacated singleton is reused as the first auxiliary component
            aux_mu[0], aux_sd[0] = means[j], sds[j]
            del counts[j], means[j], sds[j]
            z[z > j] -= 1
        k = len(counts)
        mu_all = np.concatenate([means, aux_mu])
        sd_all = np.concatenate([sds, aux_sd])
        logp = _event_term(y[i], s0, mu_all, sd_all, sel, mode)
        logp[:k] += np.log(counts)
        if k < state.k_max:
            logp[k:] += log_a_aux
        else:
            logp[k:] = -np.inf
        choice = int(np.argmax(logp + gumbel[i, :logp.size]))
        if choice >= k:
            means.append(aux_mu[choice - k])
            sds.append(aux_sd[choice - k])
            counts.append(0)
            choice = k
        counts[choice] += 1
        z[i] = choice
    return z, np.array(means), np.array(sds)


def _update_components(state, y, z, means, sds, sel, mode, gen):
    s0 = state.noise_sd
    hyper = state.hyper
    new_mu = np.empty_like(means)
    new_sd = np.empty_like(sds)
    for j in range(means.size):
        members = y[z == j]
        n = members.size
        ybar = members.mean()
        m, k, a, b = hyper.posterior(n, ybar, np.sum((members - ybar) ** 2))
        if is_unit_selection(sel):
            mu, v = sample_truncated_nig(m, k, a, b, s0**2, gen)
            new_mu[j], new_sd[j] = mu, np.sqrt(v - s0**2)
            continue
        # random-walk Metropolis with step sizes from the conjugate conditional
        v_hat = b / (a - 1.0)
        step_mu = np.sqrt(v_hat / k)
        step_ls = v_hat / np.sqrt(a) / (2.0 * max(v_hat - s0**2, 0.05 * v_hat))
        mu, ls = means[j], np.log(sds[j])
        cur = _component_log_target(mu, ls, members, s0, hyper, sel, mode)
        for _ in range(MH_STEPS):
            prop_mu = mu + step_mu * gen.standard_normal()
            prop_ls = ls + step_ls * gen.standard_normal()
            new = _component_log_target(prop_mu, prop_ls, members, s0, hyper, sel, mode)
            if np.log(gen.uniform()) < new - cur:
                mu, ls, cur = prop_mu, prop_ls, new
        new_mu[j], new_sd[j] = mu, np.exp(ls)
    return new_mu, new_sd


def inflated_counts(counts, alphas, floor=ALPHA_FLOOR):
    """Counts corrected for selection, ``N_j / alpha_j``.

    ``alpha_j`` is floored at ``floor``; returns the corrected counts and how
    many components hit the floor.
    """
    alphas = np.asarray(alphas, dtype=float)
    capped = alphas < floor
    return np.asarray(counts, dtype=float) / np.maximum(alphas, floor), int(capped.sum())


def gibbs_sweep(state, cat, sel=None, rng=None, mode=LikelihoodMode.THRESHOLD_ON_PARAMETERS):
    """One full Gibbs pass; returns a new state.

    ``sel=None`` (or a unit selection) runs the plain sampler of the observed
    distribution. Any other selection function makes the mixture model the
    intrinsic distribution. ``mode`` chooses whether ``p_det`` stays in the
    per-event integral (see :class:`~popsel.likelihood.LikelihoodMode`).
    """
    y, _ = _observed(cat)
    if y.size != state.assignments.size:
        raise DomainError("state and catalogue disagree on the number of events")
    mode = LikelihoodMode(mode)
    gen = as_generator(rng)
    z, means, sds = _reassign(state, y, sel, mode, gen)
    means, sds = _update_components(state, y, z, means, sds, sel, mode, gen)
    counts = np.bincount(z, minlength=means.size)
    n_capped = state.n_capped
    if is_unit_selection(sel):
        effective = counts.astype(float)
    else:
        effective, capped = inflated_counts(counts, np.exp(sel.log_alpha(means, sds)))
        n_capped += capped
    weights = dirichlet_sample(effective + state.concentration / means.size, gen)
    return replace(state, assignments=z, means=means, sds=sds, weights=weights, n_capped=n_capped)


def run_chain(cat, n_sweeps, rng, sel=None, mode=LikelihoodMode.THRESHOLD_ON_PARAMETERS, burn=0,
              hyper=None, concentration=1.0, k_max=K_MAX):
    """Run ``n_sweeps`` sweeps from :func:`init_state` and return the post-burn states."""
    gen = as_generator(rng)
    state = init_state(cat, gen, hyper, concentration, k_max)
    states = []
    for t in range(n_sweeps):
        state = gibbs_sweep(state, cat, sel, gen, mode)
        if t >= burn:
            states.append(state)
    return states


def mixture_logpdf(state, x):
    x = np.asarray(x, dtype=float)
    comp = _norm_logpdf(x[:, None], state.means[None, :], state.sds[None, :]) + np.log(state.weights)[None, :]
    return special.logsumexp(comp, axis=1)


@dataclass
class DensityDraws:
    """Posterior draws of a density on a common grid."""

    points: np.ndarray
    log_densities: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.log_densities = np.atleast_2d(np.asarray(self.log_densities, dtype=float))

    @property
    def densities(self):
        return np.exp(self.log_densities)

    def quantile(self, q):
        return np.quantile(self.densities, q, axis=0)

    @property
    def median(self):
        return self.quantile(0.5)

    @property
    def p05(self):
        return self.quantile(0.05)

    @property
    def p95(self):
        return self.quantile(0.95)

    def grid(self, i):
        return DensityGrid(self.points, self.log_densities[i])

    def to_csv(self, path, include_draws=False):
        header = ["point", "median", "p05", "p95"]
        cols = [self.points, self.median, self.p05, self.p95]
        if include_draws:
            header += [f"draw_{i}" for i in range(self.log_densities.shape[0])]
            cols += list(self.densities)
        io.write_table(path, header, cols)


def density_draws(chain, grid, thin=1):
    """Render every ``thin``-th state as a density normalised on ``grid``."""
    if thin < 1 or len(chain) < thin:
        raise DomainError("chain must hold at least `thin` states")
    grid = np.asarray(grid, dtype=float)
    rows = [DensityGrid(grid, mixture_logpdf(s, grid)).normalized().log_values for s in chain[::thin]]
    return DensityDraws(grid, np.array(rows))


def postprocess_intrinsic(draws, sel, floor=1e-12):
    """Divide every observed-density draw by ``p_det`` and renormalise."""
    rows = [intrinsic_from_observed_grid(draws.grid(i), sel, floor).log_values
            for i in range(draws.log_densities.shape[0])]
    return DensityDraws(draws.points, np.array(rows))
