"""Intrinsic models, selection functions and observed models.

The selection function of a Gaussian toy is a Gaussian *shape*. Two
normalisations are supported:

``"unit_peak"``
    ``p_det(mu_d) = 1``, a proper detection probability. This is the default
    and the only convention the catalogue simulators accept.
``"density"``
    ``p_det = N(x | mu_d, sigma_d)``, a normal density.

The two differ by a constant factor, which cancels in every posterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import stats
from .errors import DomainError, EmptySupportError, InfeasibleParametersError
from .stats import LOG_SQRT_2PI, LOG_ZERO

CONVENTIONS = ("unit_peak", "density")


def _positive(value, name):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)) or np.any(value <= 0):
        raise DomainError(f"{name} must be finite and positive, got {value}")


@dataclass(frozen=True)
class IntrinsicModel:
    """Gaussian population N(x | mu_lambda, sigma_lambda).

    Fields may be arrays of equal shape; all methods broadcast.
    """

    mu_lambda: float
    sigma_lambda: float

    def __post_init__(self):
        _positive(self.sigma_lambda, "sigma_lambda")

    def logpdf(self, x):
        return stats.gaussian_logpdf(x, self.mu_lambda, self.sigma_lambda)

    def sample(self, rng, size):
        return stats.as_generator(rng).normal(self.mu_lambda, self.sigma_lambda, size)


@dataclass(frozen=True)
class GaussianSelection:
    mu_d: float
    sigma_d: float
    convention: str = "unit_peak"

    def __post_init__(self):
        _positive(self.sigma_d, "sigma_d")
        if self.convention not in CONVENTIONS:
            raise DomainError(f"unknown selection convention {self.convention!r}")

    @property
    def log_peak(self):
        """log of max p_det."""
        if self.convention == "unit_peak":
            return 0.0
        return -np.log(self.sigma_d) - LOG_SQRT_2PI

    def with_convention(self, convention):
        return GaussianSelection(self.mu_d, self.sigma_d, convention)

    def log_pdet(self, x):
        z = (np.asarray(x, dtype=float) - self.mu_d) / self.sigma_d
        return -0.5 * z * z + self.log_peak

    def pdet(self, x):
        return np.exp(self.log_pdet(x))

    def log_alpha(self, mu, sigma):
        """log of the integral of p_det against N(mu, sigma)."""
        var = self.sigma_d**2 + np.asarray(sigma, dtype=float) ** 2
        z2 = (np.asarray(mu, dtype=float) - self.mu_d) ** 2 / var
        # unit peak: sigma_d / sqrt(var) * exp(-z2 / 2); log_peak shifts to the density convention
        return -0.5 * z2 - 0.5 * np.log(var) + np.log(self.sigma_d) + self.log_peak

    def describe(self):
        return {"kind": "gaussian", "mu_d": float(self.mu_d), "sigma_d": float(self.sigma_d),
                "convention": self.convention}


@dataclass(frozen=True)
class StepSelection:
    """p_det = 1 for x >= threshold, 0 below."""

    threshold: float

    log_peak = 0.0

    def log_pdet(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= self.threshold, 0.0, LOG_ZERO)

    def pdet(self, x):
        return np.exp(self.log_pdet(x))

    def log_alpha(self, mu, sigma):
        return special.log_ndtr((np.asarray(mu, dtype=float) - self.threshold) / np.asarray(sigma, dtype=float))

    def describe(self):
        return {"kind": "step", "threshold": float(self.threshold)}


@dataclass(frozen=True)
class UnitSelection:
    """Every source is detected."""

    log_peak = 0.0

    def log_pdet(self, x):
        return np.zeros(np.shape(x))

    def pdet(self, x):
        return np.ones(np.shape(x))

    def log_alpha(self, mu, sigma):
        return np.zeros(np.broadcast(np.asarray(mu), np.asarray(sigma)).shape)[()]

    def describe(self):
        return {"kind": "unit"}


def is_unit_selection(sel):
    return sel is None or isinstance(sel, UnitSelection)


@dataclass(frozen=True)
class GaussianObserved:
    """Observed distribution N(x | mu_obs, sigma_obs)."""

    mu_obs: float
    sigma_obs: float

    def __post_init__(self):
        _positive(self.sigma_obs, "sigma_obs")

    def logpdf(self, x):
        return stats.gaussian_logpdf(x, self.mu_obs, self.sigma_obs)

    def cdf(self, x):
        return stats.gaussian_cdf((np.asarray(x, dtype=float) - self.mu_obs) / self.sigma_obs)


@dataclass(frozen=True)
class TruncatedObserved:
    """Observed distribution TN(x | mean, sd, lower)."""

    mean: float
    sd: float
    lower: float

    def __post_init__(self):
        _positive(self.sd, "sd")

    def logpdf(self, x):
        return stats.truncnorm_logpdf(x, self.mean, self.sd, self.lower)

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), self.lower)
        lo = stats.gaussian_cdf((self.lower - self.mean) / self.sd)
        hi = stats.gaussian_cdf((x - self.mean) / self.sd)
        return (hi - lo) / (1.0 - lo)


@dataclass(frozen=True)
class PopulationPreset:
    name: str
    mu_lambda: float
    sigma_lambda: float
    mu_d: float
    sigma_d: float
    sigma_0: float

    def intrinsic(self):
        return IntrinsicModel(self.mu_lambda, self.sigma_lambda)

    def selection(self, convention="unit_peak"):
        return GaussianSelection(self.mu_d, self.sigma_d, convention)

    def observed(self):
        return theta_of_lambda(self.intrinsic(), self.selection())


PRESETS = {
    "wide": PopulationPreset("wide", -2.0, 3.0, 0.0, 2.0, 1.0),
    "narrow": PopulationPreset("narrow", -2.0, 0.6, 0.0, 2.0, 1.0),
    "equal": PopulationPreset("equal", -2.0, 1.0, 0.0, 1.0, 1.0),
}

# Step-selection toy: intrinsic N(0, 3), threshold -1, unit noise.
TRUNCATED_TOY = {"mu_lambda": 0.0, "sigma_lambda": 3.0, "threshold": -1.0, "sigma_0": 1.0}


def theta_of_lambda(intr, sel):
    """Map intrinsic parameters to the observed Gaussian they produce."""
    s2l = np.asarray(intr.sigma_lambda, dtype=float) ** 2
    s2d = float(sel.sigma_d) ** 2
    mu_obs = (s2d * intr.mu_lambda + s2l * sel.mu_d) / (s2d + s2l)
    sigma_obs = (1.0 / s2d + 1.0 / s2l) ** -0.5
    return GaussianObserved(mu_obs, sigma_obs)


def lambda_arrays(mu_obs, sigma_obs, mu_d, sigma_d):
    """Vectorised inverse map; infeasible entries come back as NaN."""
    mu_obs = np.asarray(mu_obs, dtype=float)
    sigma_obs = np.asarray(sigma_obs, dtype=float)
    s2o = sigma_obs**2
    s2d = sigma_d**2
    with np.errstate(divide="ignore", invalid="ignore"):
        feasible = (sigma_obs > 0) & (sigma_obs < sigma_d)
        s2l = np.where(feasible, s2o * s2d / (s2d - s2o), np.nan)
        mu_l = (mu_obs * (s2d + s2l) - s2l * mu_d) / s2d
    return mu_l, np.sqrt(s2l)


def lambda_of_theta(obs, sel):
    """Invert :func:`theta_of_lambda` for a Gaussian selection function.

    Raises
    ------
    InfeasibleParametersError
        If ``sigma_obs >= sigma_d``: no intrinsic variance would produce it.
    """
    if np.any(np.asarray(obs.sigma_obs) >= sel.sigma_d):
        raise InfeasibleParametersError(
            f"sigma_obs={obs.sigma_obs} is not below sigma_d={sel.sigma_d}"
        )
    mu_l, sigma_l = lambda_arrays(obs.mu_obs, obs.sigma_obs, sel.mu_d, sel.sigma_d)
    return IntrinsicModel(mu_l[()], sigma_l[()])


def log_alpha_of_lambda(intr, sel):
    if sel is None:
        return 0.0
    return sel.log_alpha(intr.mu_lambda, intr.sigma_lambda)


def alpha_of_lambda(intr, sel):
    """Fraction of the intrinsic population that is detected."""
    return np.exp(log_alpha_of_lambda(intr, sel))


@dataclass
class DensityGrid:
    """Log density tabulated on a strictly increasing grid.

    ``unconstrained`` marks points where the density could not be
    determined (the selection function vanishes there).
    """

    points: np.ndarray
    log_values: np.ndarray
    unconstrained: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.log_values = np.asarray(self.log_values, dtype=float)
        _check_grid(self.points)
        if self.log_values.shape != self.points.shape:
            raise DomainError("points and log_values must have equal length")
        if self.unconstrained is None:
            self.unconstrained = np.zeros(self.points.shape, dtype=bool)

    @property
    def density(self):
        return np.exp(self.log_values)

    def integral(self):
        return float(np.exp(stats.log_trapezoid(self.log_values, self.points)))

    def normalized(self):
        log_norm = stats.log_trapezoid(self.log_values, self.points)
        if not np.isfinite(log_norm):
            raise EmptySupportError("density has no mass on the grid")
        return DensityGrid(self.points, self.log_values - log_norm, self.unconstrained.copy())

    def cdf(self, x=None):
        """Cumulative trapezoid integral, optionally interpolated at ``x``."""
        d = self.density
        steps = 0.5 * (d[1:] + d[:-1]) * np.diff(self.points)
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        cum /= cum[-1]
        if x is None:
            return cum
        return np.interp(x, self.points, cum, left=0.0, right=1.0)

    def to_csv(self, path):
        table = np.column_stack([self.points, self.density])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header="point,density", comments="")

    @classmethod
    def from_csv(cls, path):
        table = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        with np.errstate(divide="ignore"):
            return cls(table[:, 0], np.log(table[:, 1]))


def _check_grid(points):
    if points.ndim != 1 or points.size < 2:
        raise DomainError("a grid needs at least two points")
    if not np.all(np.diff(points) > 0):
        raise DomainError("grid points must be strictly increasing")


def default_grid(obs, n_points=2001, width=8.0):
    """Grid spanning ``mu_obs +/- width * sigma_obs``."""
    return np.linspace(obs.mu_obs - width * obs.sigma_obs, obs.mu_obs + width * obs.sigma_obs, n_points)


def observed_density_grid(intr, sel, points):
    """Tabulate p_obs, proportional to p_int * p_det, normalised on the grid."""
    points = np.asarray(points, dtype=float)
    _check_grid(points)
    sel = sel if sel is not None else UnitSelection()
    log_p = intr.logpdf(points) + sel.log_pdet(points)
    if np.all(stats.is_log_zero(log_p)):
        raise EmptySupportError("the grid lies entirely in a vetoed region")
    return DensityGrid(points, log_p).normalized()


def intrinsic_from_observed_grid(obs, sel, floor=1e-12):
    """Divide an observed density by the selection function.

    Points where ``p_det`` falls below ``floor`` times its peak are marked
    unconstrained and given zero density; the rest is renormalised.
    """
    if floor <= 0:
        raise DomainError("floor must be positive")
    sel = sel if sel is not None else UnitSelection()
    log_pdet = sel.log_pdet(obs.points)
    unconstrained = log_pdet < sel.log_peak + np.log(floor)
    if np.all(unconstrained):
        raise EmptySupportError("selection function is below the floor over the whole grid")
    log_p = np.where(unconstrained, LOG_ZERO, obs.log_values - np.where(unconstrained, 0.0, log_pdet))
    out = DensityGrid(obs.points, log_p, unconstrained | obs.unconstrained)
    return out.normalized()
