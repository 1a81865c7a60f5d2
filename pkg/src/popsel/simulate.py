"""Synthetic detected catalogues.

Two generative processes are provided:

* :func:`draw_catalog_bernoulli` keeps each intrinsic draw with probability
  ``p_det(true value)``;
* :func:`draw_catalog_threshold` draws a noisy detection statistic for each
  source and keeps it when the statistic crosses a fixed threshold. With the
  noise marginalised this is again a selection on the true value.

In both, the measurement noise on the kept events is drawn after the keep
decision, so detection and measurement error are independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from pathlib import Path

import numpy as np
from scipy import special

from . import io
from .errors import DomainError, ImpracticalSelectionError
from .population import IntrinsicModel, UnitSelection, alpha_of_lambda
from .stats import RngStream, as_generator

MIN_ALPHA = 1e-10
_MAX_BATCH = 2_000_000


@dataclass(frozen=True)
class Event:
    true_value: float
    observed_value: float
    noise_sd: float


@dataclass
class Catalog:
    """Detected events stored column-wise."""

    true_values: np.ndarray
    observed_values: np.ndarray
    noise_sd: np.ndarray
    n_drawn: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.true_values = np.asarray(self.true_values, dtype=float)
        self.observed_values = np.asarray(self.observed_values, dtype=float)
        self.noise_sd = np.broadcast_to(np.asarray(self.noise_sd, dtype=float), self.observed_values.shape).copy()
        if not (self.true_values.shape == self.observed_values.shape == self.noise_sd.shape):
            raise DomainError("catalogue columns must have equal length")
        if np.any(self.noise_sd <= 0):
            raise DomainError("noise_sd must be positive")
        if len(self) > self.n_drawn:
            raise DomainError("a catalogue cannot hold more events than were drawn")

    def __len__(self):
        return self.observed_values.size

    def __iter__(self):
        for t, o, s in zip(self.true_values, self.observed_values, self.noise_sd):
            yield Event(float(t), float(o), float(s))

    @property
    def events(self):
        return list(self)

    @property
    def is_homoscedastic(self):
        return len(self) > 0 and bool(np.all(self.noise_sd == self.noise_sd[0]))

    def to_csv(self, path):
        """Write the catalogue and its ``.meta.json`` provenance sidecar."""
        io.write_table(path, ["true_value", "observed_value", "noise_sd"],
                       [self.true_values, self.observed_values, self.noise_sd])
        io.write_metadata(io.metadata_path(path), {**self.provenance, "n_drawn": self.n_drawn,
                                                   "n_events": len(self)})

    @classmethod
    def from_csv(cls, path):
        header, data = io.read_table(path)
        if header != ["true_value", "observed_value", "noise_sd"]:
            raise DomainError(f"{path}: unexpected catalogue header {header}")
        meta_file = io.metadata_path(path)
        meta = io.read_metadata(meta_file) if Path(meta_file).exists() else {}
        n_drawn = int(meta.get("n_drawn", data.shape[0]))
        return cls(data[:, 0], data[:, 1], data[:, 2], n_drawn, meta)


@dataclass(frozen=True)
class ThresholdDetector:
    """Detection by a noisy statistic crossing a threshold.

    The statistic is ``rho_obs ~ N(slope * theta + offset, stat_noise_sd)``
    and a source is kept when ``rho_obs >= threshold``. Marginalising the
    noise gives ``p_det(theta) = Phi((rho_opt(theta) - threshold) / stat_noise_sd)``,
    so the detector also acts as a selection function.
    """

    rho_opt_slope: float = 1.0
    rho_opt_offset: float = 0.0
    stat_noise_sd: float = 1.0
    threshold: float = 0.0

    log_peak = 0.0

    def __post_init__(self):
        if not self.stat_noise_sd > 0:
            raise DomainError("stat_noise_sd must be positive")

    def rho_opt(self, theta):
        return self.rho_opt_slope * np.asarray(theta, dtype=float) + self.rho_opt_offset

    def log_pdet(self, theta):
        return special.log_ndtr((self.rho_opt(theta) - self.threshold) / self.stat_noise_sd)

    def pdet(self, theta):
        return np.exp(self.log_pdet(theta))

    def log_alpha(self, mu, sigma):
        # probit-Gaussian integral, exact
        scale = np.sqrt(self.stat_noise_sd**2 + (self.rho_opt_slope * np.asarray(sigma, dtype=float)) ** 2)
        return special.log_ndtr((self.rho_opt(mu) - self.threshold) / scale)

    def describe(self):
        return {"kind": "threshold", "rho_opt_slope": self.rho_opt_slope,
                "rho_opt_offset": self.rho_opt_offset, "stat_noise_sd": self.stat_noise_sd,
                "threshold": self.threshold}


def _noise_sd(sigma_0, n):
    sd = np.asarray(sigma_0, dtype=float)
    if sd.ndim == 0:
        sd = np.full(n, float(sd))
    elif sd.shape != (n,):
        raise DomainError("per-event noise widths must have one entry per detection")
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise DomainError("noise widths must be positive")
    return sd


def _provenance(generator, intr, selection, n_detections, sigma_0, rng, **extra):
    out = {
        "generator": generator,
        "intrinsic": {"mu_lambda": float(intr.mu_lambda), "sigma_lambda": float(intr.sigma_lambda)},
        "selection": selection.describe(),
        "n_detections": int(n_detections),
        "sigma_0": np.asarray(sigma_0, dtype=float).tolist(),
    }
    if isinstance(rng, RngStream):
        out["seed"] = int(rng.seed)
        out["stream_id"] = list(rng.spawn_key)
    out.update(extra)
    return out


def _accept_until(n_wanted, alpha, propose):
    """Run batches of ``propose(size) -> (values, keep_mask)`` until enough are kept.

    Returns the first ``n_wanted`` kept values and the number of proposals
    consumed up to and including the last kept one.
    """
    kept = []
    n_kept = 0
    n_drawn = 0
    while n_kept < n_wanted:
        remaining = n_wanted - n_kept
        batch = int(min(_MAX_BATCH, max(1024, ceil(1.1 * remaining / alpha))))
        values, keep = propose(batch)
        idx = np.flatnonzero(keep)
        if idx.size >= remaining:
            idx = idx[:remaining]
            n_drawn += int(idx[-1]) + 1
        else:
            n_drawn += batch
        kept.append(values[idx])
        n_kept += idx.size
    return np.concatenate(kept), n_drawn


def draw_catalog_bernoulli(intr, sel, n_detections, sigma_0, rng, *, select_on_observed=False):
    """Simulate ``n_detections`` detected events.

    Each intrinsic draw ``x`` is kept with probability ``sel.pdet(x)``; the
    kept events then receive Gaussian measurement noise of width
    ``sigma_0`` (scalar, or one width per detection).

    ``select_on_observed=True`` instead applies ``p_det`` to the *noisy*
    value. That process is not a threshold on a deterministic statistic and
    is provided only as a negative control.
    """
    if n_detections < 1:
        raise DomainError("n_detections must be at least 1")
    sel = sel if sel is not None else UnitSelection()
    if sel.log_peak > 0:
        raise DomainError("simulation needs a selection function bounded by 1 (use the unit_peak convention)")
    alpha = float(alpha_of_lambda(intr, sel))
    if alpha < MIN_ALPHA:
        raise ImpracticalSelectionError(f"detection fraction {alpha:.3g} is below {MIN_ALPHA:g}")
    gen = as_generator(rng)
    sd = _noise_sd(sigma_0, n_detections)

    if select_on_observed:
        if not np.all(sd == sd[0]):
            raise DomainError("selection on observed values needs a common noise width")

        def propose(size):
            x = intr.sample(gen, size)
            y = x + sd[0] * gen.standard_normal(size)
            keep = gen.uniform(size=size) < sel.pdet(y)
            return np.column_stack([x, y]), keep

        pairs, n_drawn = _accept_until(n_detections, alpha, propose)
        true, observed = pairs[:, 0], pairs[:, 1]
    else:
        def propose(size):
            x = intr.sample(gen, size)
            keep = gen.uniform(size=size) < sel.pdet(x)
            return x, keep

        true, n_drawn = _accept_until(n_detections, alpha, propose)
        observed = true + sd * gen.standard_normal(n_detections)

    prov = _provenance("bernoulli", intr, sel, n_detections, sigma_0, rng,
                       select_on_observed=bool(select_on_observed))
    return Catalog(true, observed, sd, n_drawn, prov)


def draw_catalog_threshold(intr, det, n_detections, sigma_0, rng):
    """Simulate detections through a noisy statistic and a hard threshold."""
    if n_detections < 1:
        raise DomainError("n_detections must be at least 1")
    alpha = float(alpha_of_lambda(intr, det))
    if alpha < MIN_ALPHA:
        raise ImpracticalSelectionError(f"detection fraction {alpha:.3g} is below {MIN_ALPHA:g}")
    gen = as_generator(rng)
    sd = _noise_sd(sigma_0, n_detections)

    def propose(size):
        theta = intr.sample(gen, size)
        rho_obs = det.rho_opt(theta) + det.stat_noise_sd * gen.standard_normal(size)
        return theta, rho_obs >= det.threshold

    true, n_drawn = _accept_until(n_detections, alpha, propose)
    observed = true + sd * gen.standard_normal(n_detections)
    prov = _provenance("threshold", intr, det, n_detections, sigma_0, rng)
    return Catalog(true, observed, sd, n_drawn, prov)


def empirical_detection_fraction(cat):
    if cat.n_drawn <= 0 or len(cat) == 0:
        raise DomainError("detection fraction of an empty catalogue is undefined")
    return len(cat) / cat.n_drawn


def intrinsic_from_provenance(prov):
    p = prov["intrinsic"]
    return IntrinsicModel(p["mu_lambda"], p["sigma_lambda"])
