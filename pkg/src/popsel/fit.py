"""Posterior fits of catalogues: observed models, intrinsic models, remapping.

Walkers start in a small ball around a moment-based estimate, with the
ball's width set to the expected posterior width, so that catalogues of
a million events need no long burn-in.
"""

import numpy as np

from .likelihood import (
    DataSummary,
    LikelihoodMode,
    loglike_inlikelihood_gaussian,
    loglike_observed_gaussian,
    loglike_observed_truncnorm,
)
from .population import (
    GaussianObserved,
    GaussianSelection,
    IntrinsicModel,
    TruncatedObserved,
    lambda_arrays,
)
from .sampler import LAMBDA_BOX, THETA_BOX, TRUNCATED_BOX, SamplerConfig, remap_samples, sample_posterior


def _data(cat):
    """Sufficient statistics when the catalogue allows them, else the catalogue."""
    if isinstance(cat, DataSummary):
        return cat
    return DataSummary.from_catalog(cat) if cat.is_homoscedastic else cat


def _moments(data):
    if isinstance(data, DataSummary):
        n, mean, var, noise = data.n, data.mean_obs, data.sumsq_obs / data.n, data.noise_sd
    else:
        y = data.observed_values
        n, mean, var, noise = y.size, y.mean(), y.var(), float(np.sqrt(np.mean(data.noise_sd**2)))
    sd = np.sqrt(max(var - noise**2, 0.01 * var, 1e-4))
    width = np.sqrt(var / n)
    return mean, sd, width


def _clip_into(box, point):
    lo, hi = np.asarray(box.lower), np.asarray(box.upper)
    span = hi - lo
    return np.clip(point, lo + 1e-3 * span, hi - 1e-3 * span)


def fit_observed_gaussian(cat, config=SamplerConfig(), prior=THETA_BOX, rng=None):
    """Posterior over (mu_obs, sigma_obs) under a uniform prior box."""
    data = _data(cat)
    mean, sd, width = _moments(data)

    def loglike(x):
        return loglike_observed_gaussian(data, GaussianObserved(x[:, 0], x[:, 1]))

    start = _clip_into(prior, [mean, sd])
    return sample_posterior(loglike, prior, config, initial=start, initial_scale=width,
                            vectorized=True, rng=rng)


def fit_truncated(cat, threshold, config=SamplerConfig(), prior=TRUNCATED_BOX, rng=None):
    """Posterior over (mean, sd) of a Gaussian truncated at a known threshold."""
    mean, sd, width = _moments(cat)

    def loglike(x):
        return loglike_observed_truncnorm(cat, TruncatedObserved(x[:, 0], x[:, 1], threshold))

    start = _clip_into(prior, [mean, sd])
    return sample_posterior(loglike, prior, config, initial=start, initial_scale=width,
                            vectorized=True, rng=rng)


def fit_intrinsic(cat, sel, config=SamplerConfig(), mode=LikelihoodMode.THRESHOLD_ON_PARAMETERS,
                  prior=LAMBDA_BOX, rng=None):
    """Posterior over (mu_lambda, sigma_lambda) with alpha(Lambda) in the likelihood."""
    data = _data(cat)
    if isinstance(data, DataSummary) and not isinstance(sel, GaussianSelection) and sel is not None:
        data = cat
    mean, sd, width = _moments(data)
    start = np.array([mean, sd])
    if isinstance(sel, GaussianSelection):
        mu_l, sigma_l = lambda_arrays(mean, sd, sel.mu_d, sel.sigma_d)
        if np.isfinite(sigma_l):
            start = np.array([mu_l, sigma_l])

    def loglike(x):
        return loglike_inlikelihood_gaussian(data, IntrinsicModel(x[:, 0], x[:, 1]), sel, mode, strict=False)

    return sample_posterior(loglike, prior, config, initial=_clip_into(prior, start), initial_scale=width,
                            vectorized=True, rng=rng)


def fit_and_remap(cat, sel, config=SamplerConfig(), prior=THETA_BOX, rng=None):
    """Observed-route fit followed by the map back to intrinsic parameters."""
    theta = fit_observed_gaussian(cat, config, prior, rng)
    return theta, remap_samples(theta, sel)
