"""Scalar probability primitives and seeded random streams.

Every function broadcasts over numpy arrays. Log densities of points
outside a support are ``LOG_ZERO`` (``-inf``); use :func:`is_log_zero`
rather than comparing against it directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special
from scipy.integrate import trapezoid

from .errors import DomainError

LOG_ZERO = -np.inf
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

StreamId = Union[int, tuple]


def is_log_zero(value):
    """True where a log density marks a vetoed (zero-density) point.

    Accepts ``-inf`` and, for data produced elsewhere, the most negative
    finite double.
    """
    return np.asarray(value, dtype=float) <= -np.finfo(float).max


@dataclass(frozen=True)
class GaussianParams:
    mean: float
    sd: float

    def __post_init__(self):
        _check_sd(self.sd)


@dataclass(frozen=True)
class TruncGaussianParams:
    """Gaussian restricted to ``x >= lower`` and renormalised."""

    mean: float
    sd: float
    lower: float

    def __post_init__(self):
        _check_sd(self.sd)


def _check_sd(sd):
    sd = np.asarray(sd, dtype=float)
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise DomainError(f"standard deviation must be finite and positive, got {sd}")


def gaussian_logpdf(x, mean, sd):
    """Log of the normal density N(x | mean, sd)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("gaussian_logpdf needs finite x")
    _check_sd(sd)
    z = (x - mean) / sd
    out = -0.5 * z * z - np.log(sd) - LOG_SQRT_2PI
    return out[()]


def gaussian_cdf(x):
    """Standard normal CDF."""
    return special.ndtr(x)


def gaussian_logsf(x):
    """log(1 - Phi(x)), accurate deep in the upper tail."""
    return special.log_ndtr(-np.asarray(x, dtype=float))


def truncnorm_logpdf(x, mean, sd, lower):
    """Log density of a normal truncated below at ``lower``.

    Points below ``lower`` get ``LOG_ZERO``. A ``lower`` of ``-inf``
    reduces to :func:`gaussian_logpdf`.
    """
    _check_sd(sd)
    x = np.asarray(x, dtype=float)
    log_mass = gaussian_logsf((lower - mean) / sd)
    z = (x - mean) / sd
    out = -0.5 * z * z - np.log(sd) - LOG_SQRT_2PI - log_mass
    out = np.where(x >= lower, out, LOG_ZERO)
    return out[()]


def log_trapezoid(log_values, points):
    """log of the trapezoid integral of ``exp(log_values)`` over ``points``."""
    log_values = np.asarray(log_values, dtype=float)
    points = np.asarray(points, dtype=float)
    peak = np.max(log_values)
    if is_log_zero(peak):
        return LOG_ZERO
    return peak + np.log(trapezoid(np.exp(log_values - peak), points))


@dataclass(frozen=True)
class RngStream:
    """A replayable random stream.

    Streams with equal ``(seed, stream_id)`` produce identical draws. The
    bit generator is Philox, a counter-based generator, so independent
    streams can be handed to parallel workers without coordination.
    """

    seed: int
    stream_id: StreamId = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    @property
    def spawn_key(self):
        if isinstance(self.stream_id, tuple):
            return tuple(int(s) for s in self.stream_id)
        return (int(self.stream_id),)

    def generator(self):
        seq = np.random.SeedSequence(int(self.seed), spawn_key=self.spawn_key)
        return np.random.Generator(np.random.Philox(seq))

    def spawn(self, index):
        """Child stream, independent of this one and of its siblings."""
        return RngStream(self.seed, self.spawn_key + (int(index),))


def as_generator(rng):
    """Accept an RngStream, a Generator, or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if rng is None:
        raise DomainError("an explicit seed or RngStream is required")
    return RngStream(int(rng)).generator()


def dirichlet_sample(concentrations, rng):
    """Draw one weight vector from a Dirichlet distribution.

    Sampled through normalised log-gamma variates so that very small
    concentrations (the ``a/K`` terms of a truncated Dirichlet process)
    never produce an all-zero vector.
    """
    alpha = np.asarray(concentrations, dtype=float)
    if alpha.ndim != 1 or alpha.size < 1:
        raise DomainError("concentrations must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise DomainError("all concentrations must be positive")
    if alpha.size == 1:
        return np.ones(1)
    gen = as_generator(rng)
    # Gamma(a) = Gamma(a + 1) * U**(1/a), kept in log space.
    log_g = np.log(gen.standard_gamma(alpha + 1.0)) + np.log(gen.uniform(size=alpha.size)) / alpha
    log_g -= np.max(log_g)
    w = np.exp(log_g)
    return w / w.sum()
