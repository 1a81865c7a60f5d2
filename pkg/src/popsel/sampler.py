"""Affine-invariant ensemble sampler for low-dimensional boxes.

Walkers are split into two halves; each half is moved with the stretch
move against the other half, so a vectorised log-likelihood can be called
once per half-step.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import io
from .errors import DomainError, InitializationError, RemapFailureError
from .population import lambda_arrays
from .stats import LOG_ZERO, RngStream, as_generator

DROP_WARN_FRACTION = 0.05
ESS_DEGENERATE = 0.0


@dataclass(frozen=True)
class PriorBox:
    """Uniform prior over an axis-aligned box."""

    names: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if not (len(self.names) == len(self.lower) == len(self.upper)) or not self.names:
            raise DomainError("prior box needs one (name, lower, upper) per parameter")
        if any(not lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise DomainError("prior box needs lower < upper for every parameter")

    @classmethod
    def from_bounds(cls, bounds):
        """Build from ``{name: (lower, upper)}`` preserving order."""
        names = tuple(bounds)
        return cls(names, tuple(float(bounds[n][0]) for n in names), tuple(float(bounds[n][1]) for n in names))

    @property
    def ndim(self):
        return len(self.names)

    @property
    def log_density(self):
        return -float(np.sum(np.log(np.subtract(self.upper, self.lower))))

    def contains(self, points):
        points = np.atleast_2d(points)
        return np.all((points > np.asarray(self.lower)) & (points <= np.asarray(self.upper)), axis=1)


# Default boxes; the lower sd edge is open.
THETA_BOX = PriorBox(("mu_obs", "sigma_obs"), (-20.0, 0.01), (20.0, 20.0))
LAMBDA_BOX = PriorBox(("mu_lambda", "sigma_lambda"), (-20.0, 0.01), (20.0, 20.0))
TRUNCATED_BOX = PriorBox(("mean", "sd"), (-20.0, 0.01), (20.0, 20.0))


@dataclass(frozen=True)
class SamplerConfig:
    n_walkers: int = 32
    n_steps: int = 3000
    n_burn: Optional[int] = None
    seed: int = 0
    stretch: float = 2.0
    ess_floor: float = 1000.0

    def __post_init__(self):
        if self.n_walkers < 4 or self.n_walkers % 2:
            raise DomainError("n_walkers must be even and at least 4")
        if self.n_steps < 2:
            raise DomainError("n_steps must be at least 2")
        if not 0 <= self.burn < self.n_steps:
            raise DomainError("n_burn must lie in [0, n_steps)")
        if not self.stretch > 1:
            raise DomainError("stretch scale must exceed 1")

    @property
    def burn(self):
        return self.n_steps // 2 if self.n_burn is None else int(self.n_burn)


@dataclass
class PosteriorSamples:
    names: tuple
    draws: np.ndarray
    log_posterior: np.ndarray
    acceptance_rate: float = float("nan")
    ess: dict = field(default_factory=dict)
    converged: bool = True
    n_dropped: int = 0
    metadata: dict = field(default_factory=dict)
    # post-burn chain as (n_steps, n_walkers, n_params), when available
    chain: Optional[np.ndarray] = None

    def __post_init__(self):
        self.names = tuple(self.names)
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        self.log_posterior = np.asarray(self.log_posterior, dtype=float)
        if self.draws.shape[1] != len(self.names) or self.draws.shape[0] != self.log_posterior.size:
            raise DomainError("draws, names and log_posterior are inconsistent")
        if self.draws.shape[0] < 1:
            raise DomainError("posterior needs at least one draw")

    def __len__(self):
        return self.draws.shape[0]

    def column(self, name):
        try:
            return self.draws[:, self.names.index(name)]
        except ValueError:
            raise DomainError(f"no parameter named {name!r}") from None

    def to_csv(self, path, extra_metadata=None):
        io.write_table(path, list(self.names) + ["log_posterior"],
                       [*self.draws.T, self.log_posterior])
        meta = {
            **self.metadata,
            "acceptance_rate": self.acceptance_rate,
            "ess": self.ess,
            "converged": self.converged,
            "n_dropped": self.n_dropped,
            "n_draws": len(self),
        }
        if extra_metadata:
            meta.update(extra_metadata)
        io.write_metadata(io.metadata_path(path), meta)

    @classmethod
    def from_csv(cls, path):
        """Read draws; a missing ``log_posterior`` column is filled with NaN."""
        header, data = io.read_table(path)
        if header and header[-1] == "log_posterior":
            return cls(tuple(header[:-1]), data[:, :-1], data[:, -1])
        return cls(tuple(header), data, np.full(data.shape[0], np.nan))


def _autocorr(x):
    """Normalised autocorrelation function of a 1-d series via FFT."""
    n = x.size
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    return acf / acf[0]


def _integrated_time(chains, c=5.0):
    """Autocorrelation time of ``chains`` shaped (n_steps, n_chains).

    The ACF is averaged over chains and summed up to Sokal's self-consistent
    window ``M >= c * tau(M)``. Returns ``inf`` for a constant chain.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 1:
        chains = chains[:, None]
    centred = chains - chains.mean(axis=0)
    if not np.any(centred):
        return np.inf
    live = np.ptp(chains, axis=0) > 0
    acf = np.mean([_autocorr(chains[:, k]) for k in np.flatnonzero(live)], axis=0)
    taus = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(taus.size) < c * taus
    m = int(np.argmin(window)) if not np.all(window) else taus.size - 1
    return max(float(taus[m]), 1e-12)


def effective_sample_size(samples):
    """Autocorrelation-based effective sample size.

    Accepts :class:`PosteriorSamples` (returns ``{name: ess}``), a 1-d
    series, or an ``(n_steps, n_chains)`` array. A constant series gives
    the sentinel ``ESS_DEGENERATE`` (0).
    """
    if isinstance(samples, PosteriorSamples):
        if samples.chain is not None:
            return {n: effective_sample_size(samples.chain[:, :, i]) for i, n in enumerate(samples.names)}
        return {n: effective_sample_size(samples.draws[:, i]) for i, n in enumerate(samples.names)}
    x = np.asarray(samples, dtype=float)
    total = x.size
    if total < 100:
        raise DomainError("effective sample size needs at least 100 draws")
    tau = _integrated_time(x)
    if not np.isfinite(tau):
        return ESS_DEGENERATE
    return float(min(total, total / tau))


def _evaluate(loglike, prior, points, vectorized):
    out = np.full(points.shape[0], LOG_ZERO)
    inside = prior.contains(points)
    if np.any(inside):
        if vectorized:
            vals = np.asarray(loglike(points[inside]), dtype=float)
        else:
            vals = np.array([loglike(p) for p in points[inside]], dtype=float)
        out[inside] = np.where(np.isnan(vals), LOG_ZERO, vals)
    return out


def _initial_ensemble(loglike, prior, n_walkers, gen, initial, initial_scale, vectorized, tries=100):
    lower, upper = np.asarray(prior.lower), np.asarray(prior.upper)
    ndim = prior.ndim

    def propose(k):
        if initial is None:
            return gen.uniform(lower, upper, size=(k, ndim))
        scale = np.broadcast_to(np.asarray(initial_scale, dtype=float), (ndim,))
        return np.asarray(initial, dtype=float) + scale * gen.standard_normal((k, ndim))

    walkers = propose(n_walkers)
    lp = _evaluate(loglike, prior, walkers, vectorized)
    for _ in range(tries):
        bad = ~np.isfinite(lp)
        if not np.any(bad):
            break
        walkers[bad] = propose(int(bad.sum()))
        lp[bad] = _evaluate(loglike, prior, walkers[bad], vectorized)
    if not np.any(np.isfinite(lp)):
        raise InitializationError("log-likelihood is -inf for every initial walker")
    return walkers, lp


def sample_posterior(loglike: Callable, prior: PriorBox, config: SamplerConfig = SamplerConfig(), *,
                     initial=None, initial_scale=1e-3, vectorized=False, rng=None) -> PosteriorSamples:
    """Sample ``exp(loglike)`` times the uniform prior on ``prior``.

    Parameters
    ----------
    loglike
        Log-likelihood of a parameter vector. With ``vectorized=True`` it
        receives an ``(m, ndim)`` array and returns ``m`` values.
    prior
        The prior box; points outside it are never passed to ``loglike``.
    config
        Ensemble size, run length, burn-in and seed.
    initial, initial_scale
        Optional centre and spread of a Gaussian ball of starting walkers.
        By default walkers start uniformly over the box.
    rng
        Overrides ``config.seed`` with an explicit stream.

    Returns
    -------
    PosteriorSamples
        Post burn-in draws, flattened step by step. ``converged`` is False
        when any parameter's ESS is below ``config.ess_floor``.
    """
    gen = as_generator(rng if rng is not None else RngStream(config.seed))
    nw, ndim, a = config.n_walkers, prior.ndim, config.stretch
    walkers, lp = _initial_ensemble(loglike, prior, nw, gen, initial, initial_scale, vectorized)

    chain = np.empty((config.n_steps, nw, ndim))
    lp_chain = np.empty((config.n_steps, nw))
    halves = (np.arange(0, nw // 2), np.arange(nw // 2, nw))
    n_accept = 0
    for step in range(config.n_steps):
        for h in (0, 1):
            active, other = halves[h], halves[1 - h]
            k = active.size
            z = ((a - 1.0) * gen.uniform(size=k) + 1.0) ** 2 / a
            partners = walkers[other[gen.integers(0, other.size, size=k)]]
            proposal = partners + z[:, None] * (walkers[active] - partners)
            lp_new = _evaluate(loglike, prior, proposal, vectorized)
            with np.errstate(invalid="ignore"):
                log_ratio = (ndim - 1) * np.log(z) + lp_new - lp[active]
            accept = np.log(gen.uniform(size=k)) < np.nan_to_num(log_ratio, nan=-np.inf)
            walkers[active[accept]] = proposal[accept]
            lp[active[accept]] = lp_new[accept]
            if step >= config.burn:
                n_accept += int(accept.sum())
        chain[step] = walkers
        lp_chain[step] = lp

    kept = chain[config.burn:]
    draws = kept.reshape(-1, ndim)
    samples = PosteriorSamples(
        prior.names,
        draws,
        lp_chain[config.burn:].reshape(-1) + prior.log_density,
        acceptance_rate=n_accept / float(kept.shape[0] * nw),
        chain=kept,
        metadata={"sampler": "ensemble-stretch", "config": asdict(config), "prior": {
            n: [lo, hi] for n, lo, hi in zip(prior.names, prior.lower, prior.upper)}},
    )
    samples.ess = effective_sample_size(samples)
    samples.converged = all(v >= config.ess_floor for v in samples.ess.values())
    return samples


def remap_samples(samples, sel):
    """Map (mu_obs, sigma_obs) draws to (mu_lambda, sigma_lambda).

    Draws with ``sigma_obs >= sigma_d`` have no intrinsic counterpart; they
    are dropped and counted in ``n_dropped``. A drop fraction above 5%
    emits a warning and sets ``metadata["drop_warning"]``.
    """
    mu_l, sigma_l = lambda_arrays(samples.column("mu_obs"), samples.column("sigma_obs"), sel.mu_d, sel.sigma_d)
    ok = np.isfinite(sigma_l)
    n_bad = int((~ok).sum())
    if not np.any(ok):
        raise RemapFailureError("every draw lies outside the image of the intrinsic parameter space")
    fraction = n_bad / len(samples)
    meta = {**samples.metadata, "remap_selection": sel.describe(), "drop_fraction": fraction,
            "drop_warning": fraction > DROP_WARN_FRACTION}
    if fraction > DROP_WARN_FRACTION:
        warnings.warn(f"{n_bad} of {len(samples)} draws ({fraction:.1%}) were infeasible and dropped",
                      RuntimeWarning, stacklevel=2)
    chain = None
    if n_bad == 0 and samples.chain is not None:
        c_mu, c_sigma = lambda_arrays(samples.chain[..., 0], samples.chain[..., 1], sel.mu_d, sel.sigma_d)
        chain = np.stack([c_mu, c_sigma], axis=-1)
    out = PosteriorSamples(
        ("mu_lambda", "sigma_lambda"),
        np.column_stack([mu_l[ok], sigma_l[ok]]),
        samples.log_posterior[ok],
        acceptance_rate=samples.acceptance_rate,
        n_dropped=samples.n_dropped + n_bad,
        metadata=meta,
        chain=chain,
    )
    out.ess = effective_sample_size(out) if len(out) >= 100 else {}
    out.converged = samples.converged
    return out
