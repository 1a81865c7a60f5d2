"""Calibration checks: percentiles of truth, PP trials, Beta bands, KS tests.

A PP trial simulates a catalogue from a known population, fits it, and
records where the true parameters fall within their marginal posteriors.
For a calibrated pipeline these percentiles are uniform on [0, 1].
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.integrate import trapezoid

from . import io
from .errors import ConvergenceError, DomainError
from .fit import fit_and_remap, fit_intrinsic
from .population import PRESETS
from .sampler import SamplerConfig
from .simulate import draw_catalog_bernoulli
from .stats import RngStream

PIPELINES = ("post-processing", "in-likelihood")
MAX_EXCLUDED_FRACTION = 0.05
KS_P_MIN = 0.01
BAND_FRACTION_MIN = 0.90


def _as_named(samples):
    return dict(zip(samples.names, samples.draws.T))


def percentile_of_truth(samples, truth):
    """Fraction of marginal draws below the true value, per parameter.

    Parameters
    ----------
    samples : PosteriorSamples
    truth : dict
        ``{name: value}`` with exactly the parameter names of ``samples``.
    """
    if set(truth) != set(samples.names):
        raise DomainError(f"truth names {sorted(truth)} do not match {list(samples.names)}")
    if len(samples) < 100:
        raise DomainError("percentile of truth needs at least 100 draws")
    cols = _as_named(samples)
    return {n: float(np.mean(cols[n] < truth[n])) for n in samples.names}


def z_scores(samples, truth):
    """``(truth - posterior mean) / posterior sd`` per parameter."""
    cols = _as_named(samples)
    return {n: float((truth[n] - cols[n].mean()) / cols[n].std(ddof=1)) for n in samples.names}


def beta_credible_band(n, level=0.9):
    """Central ``level`` interval of the k-th of ``n`` sorted uniforms.

    Returns ``(lower, upper)`` arrays indexed by rank ``k = 1..n``.
    """
    if not 0 < level < 1:
        raise DomainError("level must lie strictly between 0 and 1")
    if n < 1:
        raise DomainError("n must be at least 1")
    k = np.arange(1, n + 1)
    tail = 0.5 * (1.0 - level)
    return sps.beta.ppf(tail, k, n - k + 1), sps.beta.ppf(1.0 - tail, k, n - k + 1)


def band_coverage(percentiles, level=0.9):
    """Fraction of sorted percentiles inside their rank's Beta band."""
    p = np.sort(np.asarray(percentiles, dtype=float))
    lo, hi = beta_credible_band(p.size, level)
    return float(np.mean((p >= lo) & (p <= hi)))


def ks_uniformity_test(values):
    """One-sample KS test against U(0, 1); returns ``(statistic, p_value)``."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 10:
        raise DomainError("uniformity test needs at least 10 values")
    if np.any(~np.isfinite(v)) or np.any((v < 0) | (v > 1)):
        raise DomainError("values must lie in [0, 1]")
    res = sps.kstest(v, "uniform", method="asymp")
    return float(res.statistic), float(res.pvalue)


def truth_in_credible_region(samples, truth, level=0.9, max_points=4000):
    """Whether ``truth`` lies in the highest-density ``level`` region.

    The joint density is a Gaussian KDE of (a thinned copy of) the draws;
    the truth is inside when its density is at least the ``1 - level``
    quantile of the densities at the draws.
    """
    if set(truth) != set(samples.names):
        raise DomainError("truth names do not match the samples")
    step = max(1, len(samples) // max_points)
    pts = samples.draws[::step].T
    kde = sps.gaussian_kde(pts)
    at_draws = kde(pts)
    at_truth = kde(np.array([[truth[n]] for n in samples.names]))[0]
    return bool(at_truth >= np.quantile(at_draws, 1.0 - level))


def jensen_shannon(p, q, points):
    """Jensen-Shannon divergence in nats between two densities on a grid.

    Both densities are renormalised on ``points`` before comparison.
    """
    x = np.asarray(points, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    q = np.clip(np.asarray(q, dtype=float), 0.0, None)
    p = p / trapezoid(p, x)
    q = q / trapezoid(q, x)
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_p = np.where(p > 0, p * np.log(p / m), 0.0)
        kl_q = np.where(q > 0, q * np.log(q / m), 0.0)
    return float(max(0.0, 0.5 * trapezoid(kl_p, x) + 0.5 * trapezoid(kl_q, x)))


@dataclass
class PPResult:
    """Percentiles of truth from a batch of PP trials."""

    model: str
    pipeline: str
    n_events: int
    seed: int
    trials: list
    percentiles: dict
    excluded: list = field(default_factory=list)
    level: float = 0.9

    @property
    def n_completed(self):
        return len(self.trials)

    def ks(self):
        return {n: ks_uniformity_test(v) for n, v in self.percentiles.items()}

    def coverage(self):
        return {n: band_coverage(v, self.level) for n, v in self.percentiles.items()}

    @property
    def excluded_fraction(self):
        total = len(self.trials) + len(self.excluded)
        return len(self.excluded) / total if total else 0.0

    def summary(self):
        ks = self.ks()
        cov = self.coverage()
        per = {n: {"ks_statistic": ks[n][0], "ks_p_value": ks[n][1], "band_coverage": cov[n]}
               for n in self.percentiles}
        ok = (self.excluded_fraction <= MAX_EXCLUDED_FRACTION
              and all(v["ks_p_value"] > KS_P_MIN and v["band_coverage"] >= BAND_FRACTION_MIN
                      for v in per.values()))
        return {"model": self.model, "pipeline": self.pipeline, "n_events": self.n_events,
                "seed": self.seed, "n_completed": self.n_completed, "n_excluded": len(self.excluded),
                "excluded_trials": list(self.excluded), "level": self.level,
                "parameters": per, "passed": bool(ok)}

    @property
    def passed(self):
        return self.summary()["passed"]

    def to_csv(self, path):
        """Long-format ``trial,parameter,percentile`` plus a JSON summary sidecar."""
        rows = [(t, n, p) for n, vals in self.percentiles.items() for t, p in zip(self.trials, vals)]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("trial,parameter,percentile\n")
            for t, n, p in rows:
                fh.write(f"{t},{n},{p:.17g}\n")
        io.write_metadata(io.metadata_path(path), self.summary())


def _pp_trial(args):
    """One PP trial; top-level so that worker processes can pickle it."""
    model, trial, n_events, pipeline, seed, config = args
    preset = PRESETS[model]
    stream = RngStream(seed, (int(trial),))
    intr, sel = preset.intrinsic(), preset.selection()
    cat = draw_catalog_bernoulli(intr, sel, n_events, preset.sigma_0, stream.spawn(0))
    if pipeline == "post-processing":
        _, post = fit_and_remap(cat, sel, config, rng=stream.spawn(1))
    else:
        post = fit_intrinsic(cat, sel, config, rng=stream.spawn(1))
    truth = {"mu_lambda": preset.mu_lambda, "sigma_lambda": preset.sigma_lambda}
    return trial, post.converged, percentile_of_truth(post, truth)


def run_pp_trials(model, n_trials, n_events, pipeline="post-processing", seed=0,
                  config=SamplerConfig(), n_jobs=1, level=0.9):
    """Simulate, fit and score ``n_trials`` independent catalogues.

    Trial ``t`` draws its catalogue from ``RngStream(seed, (t, 0))`` and its
    sampler from ``RngStream(seed, (t, 1))``, so results do not depend on
    ``n_jobs`` or scheduling order. Trials whose sampler did not reach the
    ESS floor are excluded and listed in ``PPResult.excluded``.
    """
    if model not in PRESETS:
        raise DomainError(f"unknown model {model!r}; choose from {sorted(PRESETS)}")
    if pipeline not in PIPELINES:
        raise DomainError(f"unknown pipeline {pipeline!r}; choose from {PIPELINES}")
    if n_trials < 10:
        raise DomainError("a PP test needs at least 10 trials")
    jobs = [(model, t, int(n_events), pipeline, int(seed), config) for t in range(n_trials)]
    n_jobs = (os.cpu_count() or 1) if n_jobs is None else int(n_jobs)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_pp_trial, jobs))
    else:
        results = [_pp_trial(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    names = ("mu_lambda", "sigma_lambda")
    kept = [r for r in results if r[1]]
    out = PPResult(model, pipeline, int(n_events), int(seed), [r[0] for r in kept],
                   {n: [r[2][n] for r in kept] for n in names},
                   excluded=[r[0] for r in results if not r[1]], level=level)
    if len(out.trials) < 10:
        raise ConvergenceError(f"only {len(out.trials)} of {n_trials} trials converged")
    return out
