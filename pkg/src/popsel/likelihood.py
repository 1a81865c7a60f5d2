"""Log-likelihoods for the observed-distribution and in-likelihood routes.

Data may be a :class:`~popsel.simulate.Catalog`, a :class:`DataSummary`
(homoscedastic Gaussian fast path), or a plain array of observed values
together with ``noise_sd``. Model parameters may be numpy arrays: the
result then has the broadcast shape of the parameters, summed over events.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, ImpracticalSelectionError
from .population import (
    DensityGrid,
    GaussianObserved,
    GaussianSelection,
    StepSelection,
    TruncatedObserved,
    UnitSelection,
    log_alpha_of_lambda,
)
from .simulate import Catalog, ThresholdDetector
from .stats import LOG_SQRT_2PI, LOG_ZERO


LOG_ALPHA_MIN = float(np.log(np.finfo(float).tiny))


class LikelihoodMode(enum.Enum):
    """How detection enters the per-event term of the in-likelihood route.

    ``THRESHOLD_ON_PARAMETERS``
        Detection depends on the true value, so ``p_det`` stays inside the
        per-event integral. This matches catalogues from
        :func:`~popsel.simulate.draw_catalog_bernoulli`.
    ``THRESHOLD_ON_DATA``
        Detection is a deterministic function of the data, so
        ``p(det | d, theta) = 1`` cancels ``p_det`` from the integrand and
        only the ``alpha(Lambda)**-N`` factor remains.
    """

    THRESHOLD_ON_PARAMETERS = "threshold_on_parameters"
    THRESHOLD_ON_DATA = "threshold_on_data"


@dataclass(frozen=True)
class DataSummary:
    """Sufficient statistics of homoscedastic observed values.

    ``sumsq_obs`` is the sum of squared deviations from ``mean_obs``.
    """

    n: int
    mean_obs: float
    sumsq_obs: float
    noise_sd: float

    def __post_init__(self):
        if self.n < 1 or self.sumsq_obs < 0 or not self.noise_sd > 0:
            raise DomainError("invalid data summary")

    @classmethod
    def from_values(cls, observed, noise_sd):
        observed = np.asarray(observed, dtype=float)
        mean = float(np.mean(observed))
        return cls(observed.size, mean, float(np.sum((observed - mean) ** 2)), float(noise_sd))

    @classmethod
    def from_catalog(cls, cat):
        if not cat.is_homoscedastic:
            raise DomainError("sufficient statistics need a common noise width")
        return cls.from_values(cat.observed_values, cat.noise_sd[0])


def summarize(cat):
    """DataSummary for a homoscedastic catalogue, else None."""
    return DataSummary.from_catalog(cat) if cat.is_homoscedastic else None


def _norm_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - LOG_SQRT_2PI


def _events(data, noise_sd=None):
    """Observed values and widths, shaped to broadcast against parameters."""
    if isinstance(data, Catalog):
        y, sd = data.observed_values, data.noise_sd
    else:
        if noise_sd is None:
            raise DomainError("noise_sd is required when passing raw observed values")
        y = np.asarray(data, dtype=float)
        sd = np.broadcast_to(np.asarray(noise_sd, dtype=float), y.shape)
    if y.ndim != 1 or y.size == 0:
        raise DomainError("need a non-empty 1-d set of observed values")
    return y, sd


def _sum_events(per_event_fn, y, sd, *params):
    """Sum ``per_event_fn(y, sd, *params)`` over events for array parameters."""
    shape = np.broadcast(*[np.asarray(p) for p in params]).shape
    extra = (1,) * len(shape)
    yy = y.reshape(y.shape + extra)
    ss = sd.reshape(sd.shape + extra)
    return np.sum(per_event_fn(yy, ss, *params), axis=0)[()]


def _summary_sum(summary, mean, var):
    """Sum over events of log N(y_i | mean, sqrt(var)) from sufficient statistics."""
    resid = summary.sumsq_obs + summary.n * (summary.mean_obs - mean) ** 2
    return (-0.5 * summary.n * (np.log(var) + 2 * LOG_SQRT_2PI) - 0.5 * resid / var)[()]


def loglike_observed_gaussian(data, theta, noise_sd=None):
    """Observed-route likelihood with a Gaussian observed model.

    Each event contributes ``log N(y_i | mu_obs, sqrt(sigma_obs**2 + sigma_i**2))``.
    """
    if not isinstance(theta, GaussianObserved):
        raise DomainError("theta must be a GaussianObserved model")
    mu = np.asarray(theta.mu_obs, dtype=float)
    s2o = np.asarray(theta.sigma_obs, dtype=float) ** 2
    if isinstance(data, DataSummary):
        return _summary_sum(data, mu, s2o + data.noise_sd**2)
    y, sd = _events(data, noise_sd)
    return _sum_events(lambda yy, ss, m, v: _norm_logpdf(yy, m, np.sqrt(v + ss**2)), y, sd, mu, s2o)


def _truncnorm_marginal(y, sd_i, mean, sd, lower):
    s2 = sd**2 + sd_i**2
    mu_c = (mean * sd_i**2 + y * sd**2) / s2
    sigma_c = sd * sd_i / np.sqrt(s2)
    return (_norm_logpdf(y, mean, np.sqrt(s2))
            + special.log_ndtr((mu_c - lower) / sigma_c)
            - special.log_ndtr((mean - lower) / sd))


def loglike_observed_truncnorm(data, theta, noise_sd=None):
    """Observed-route likelihood with a truncated Gaussian observed model.

    The per-event convolution of the noise kernel with the truncated density
    is done in closed form: a Gaussian product times a ratio of normal
    survival functions.
    """
    if not isinstance(theta, TruncatedObserved):
        raise DomainError("theta must be a TruncatedObserved model")
    sd = np.asarray(theta.sd, dtype=float)
    if np.any(~np.isfinite(sd)) or np.any(sd <= 0):
        raise DomainError("truncated model needs a positive sd")
    y, sd_i = _events(data, noise_sd)
    return _sum_events(_truncnorm_marginal, y, sd_i, np.asarray(theta.mean, dtype=float), sd,
                       np.asarray(theta.lower, dtype=float))


def _gaussian_product(sel, mu, sigma):
    """p_det(x) * N(x | mu, sigma) = c * N(x | mu_o, sqrt(s2o)); returns (log c, mu_o, s2o)."""
    s2d, s2l = sel.sigma_d**2, sigma**2
    mu_o = (s2d * mu + s2l * sel.mu_d) / (s2d + s2l)
    s2o = s2d * s2l / (s2d + s2l)
    log_c = (np.log(sel.sigma_d) - 0.5 * np.log(s2d + s2l)
             - 0.5 * (mu - sel.mu_d) ** 2 / (s2d + s2l) + sel.log_peak)
    return log_c, mu_o, s2o


def _selected_marginal(sel, y, sd_i, mu, sigma):
    """log of the integral of N(y | x, sd_i) * p_det(x) * N(x | mu, sigma)."""
    if isinstance(sel, UnitSelection) or sel is None:
        return _norm_logpdf(y, mu, np.sqrt(sigma**2 + sd_i**2))
    if isinstance(sel, GaussianSelection):
        log_c, mu_o, s2o = _gaussian_product(sel, mu, sigma)
        return log_c + _norm_logpdf(y, mu_o, np.sqrt(s2o + sd_i**2))
    s2 = sigma**2 + sd_i**2
    mu_c = (mu * sd_i**2 + y * sigma**2) / s2
    sigma_c = sigma * sd_i / np.sqrt(s2)
    base = _norm_logpdf(y, mu, np.sqrt(s2))
    if isinstance(sel, StepSelection):
        return base + special.log_ndtr((mu_c - sel.threshold) / sigma_c)
    if isinstance(sel, ThresholdDetector):
        a = sel.rho_opt_slope
        scale = np.sqrt(sel.stat_noise_sd**2 + (a * sigma_c) ** 2)
        return base + special.log_ndtr((sel.rho_opt(mu_c) - sel.threshold) / scale)
    raise DomainError(f"no closed-form marginal for selection {type(sel).__name__}")


def loglike_inlikelihood_gaussian(data, intr, sel, mode=LikelihoodMode.THRESHOLD_ON_PARAMETERS,
                                  noise_sd=None, strict=True):
    """In-likelihood route for a Gaussian intrinsic model.

    ``-N log alpha(Lambda)`` plus the per-event marginals, with ``p_det``
    inside the marginal or not according to ``mode``.

    With ``strict=False`` parameter points whose ``alpha`` underflows get
    ``-inf`` instead of raising, which is what a sampler wants.
    """
    mode = LikelihoodMode(mode)
    sel = sel if sel is not None else UnitSelection()
    mu = np.asarray(intr.mu_lambda, dtype=float)
    sigma = np.asarray(intr.sigma_lambda, dtype=float)
    log_alpha = np.asarray(log_alpha_of_lambda(intr, sel), dtype=float)
    # alpha below the smallest normal double counts as underflow
    bad = ~(log_alpha >= LOG_ALPHA_MIN)
    if np.any(bad) and strict:
        raise ImpracticalSelectionError("alpha(Lambda) underflows")
    if isinstance(data, DataSummary):
        s2 = sigma**2 + data.noise_sd**2
        if mode is LikelihoodMode.THRESHOLD_ON_DATA or isinstance(sel, UnitSelection):
            summed = _summary_sum(data, mu, s2)
        elif isinstance(sel, GaussianSelection):
            log_c, mu_o, s2o = _gaussian_product(sel, mu, sigma)
            summed = data.n * log_c + _summary_sum(data, mu_o, s2o + data.noise_sd**2)
        else:
            raise DomainError("sufficient statistics do not cover this selection function")
        with np.errstate(invalid="ignore"):
            out = summed - data.n * log_alpha
        return np.where(bad, LOG_ZERO, out)[()]
    y, sd_i = _events(data, noise_sd)

    if mode is LikelihoodMode.THRESHOLD_ON_DATA:
        summed = _sum_events(lambda yy, ss, m, s: _norm_logpdf(yy, m, np.sqrt(s**2 + ss**2)), y, sd_i, mu, sigma)
    else:
        summed = _sum_events(lambda yy, ss, m, s: _selected_marginal(sel, yy, ss, m, s), y, sd_i, mu, sigma)
    with np.errstate(invalid="ignore"):
        out = summed - y.size * log_alpha
    return np.where(bad, LOG_ZERO, out)[()]


def log_marginal_quadrature(y, sd_i, density, bounds, breakpoints=(), epsrel=1e-12):
    """log of the integral of N(y | x, sd_i) * density(x) by adaptive quadrature.

    The range is ``bounds`` clipped to ``y +/- 40 sd_i``, beyond which the
    kernel underflows in double precision. A steep density can move the
    integrand's mass well away from ``y``, so nothing narrower is safe.
    """
    lo = max(bounds[0], y - 40.0 * sd_i)
    hi = min(bounds[1], y + 40.0 * sd_i)
    if not lo < hi:
        return LOG_ZERO
    # rescale by the kernel peak so quad works on O(1) numbers
    peak = _norm_logpdf(0.0, 0.0, sd_i)
    # split near the kernel so quad cannot step over it
    near = (y - 12.0 * sd_i, y, y + 12.0 * sd_i)
    pts = sorted(p for p in (*breakpoints, *near) if lo < p < hi) or None
    y, sd_i = float(y), float(sd_i)
    val, _ = integrate.quad(lambda x: math.exp(-0.5 * ((y - x) / sd_i) ** 2) * density(x), lo, hi,
                            points=pts, epsabs=0.0, epsrel=epsrel, limit=500)
    return np.log(val) + peak if val > 0 else LOG_ZERO


def loglike_quadrature_oracle(data, density, noise_sd=None, *, bounds=None, breakpoints=()):
    """Brute-force log-likelihood used to check every closed form.

    ``density`` is either a callable pdf together with ``bounds`` (the
    interval holding its mass), or a :class:`DensityGrid`, in which case the
    per-event integrals use the trapezoid rule on the grid.
    """
    y, sd_i = _events(data, noise_sd)
    if isinstance(density, DensityGrid):
        if abs(density.integral() - 1.0) > 1e-6:
            raise DomainError("density grid is not normalised")
        p = density.density
        kern = _norm_logpdf(y[:, None], density.points[None, :], sd_i[:, None])
        vals = integrate.trapezoid(np.exp(kern) * p[None, :], density.points, axis=1)
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(vals)))
    if bounds is None:
        raise DomainError("a callable density needs finite bounds")
    pts = [p for p in breakpoints if bounds[0] < p < bounds[1]] or None
    mass, _ = integrate.quad(density, bounds[0], bounds[1], points=pts, epsabs=0.0, epsrel=1e-12, limit=500)
    if not abs(mass - 1.0) < 1e-6:
        raise DomainError(f"density integrates to {mass}, not 1")
    return float(sum(log_marginal_quadrature(yi, si, density, bounds, breakpoints) for yi, si in zip(y, sd_i)))
