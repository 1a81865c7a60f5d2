"""Data behind each reproduced figure, written as CSV plus a JSON summary.

Every ``figureN`` function takes an output directory and a base seed,
writes its tables, and returns the summary dictionary it also stores in
``summary.json``. Column contracts:

1. ``theta_samples.csv`` (mu_obs, sigma_obs, log_posterior) and
   ``lambda_samples.csv`` (mu_lambda, sigma_lambda, log_posterior) for the
   narrow model with 1000 events.
2. ``densities.csv``: point, true, then median/p05/p95 for the remap,
   divide and dpgmm recipes of the narrow model.
3. ``pp_<model>.csv`` (trial, parameter, percentile) per model and
   ``beta_band.csv`` (rank, expected, lower, upper).
4. ``lambda_samples.csv`` for the equal model with a million events.
5. ``densities.csv``: point, true_pobs, then median/p05/p95 for the
   truncated and plain Gaussian fits of the step-selection toy.
6. ``densities.csv``: point, true_pint, then median/p05/p95 for the
   runtime-corrected and post-processed mixture reconstructions.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import __version__, io
from .dpgmm import density_draws, postprocess_intrinsic, run_chain
from .fit import fit_and_remap, fit_observed_gaussian, fit_truncated
from .likelihood import LikelihoodMode
from .population import (
    PRESETS,
    TRUNCATED_TOY,
    DensityGrid,
    GaussianObserved,
    IntrinsicModel,
    StepSelection,
    TruncatedObserved,
    intrinsic_from_observed_grid,
    observed_density_grid,
)
from .sampler import SamplerConfig
from .simulate import draw_catalog_bernoulli
from .stats import RngStream
from .validate import (
    beta_credible_band,
    jensen_shannon,
    percentile_of_truth,
    run_pp_trials,
    truth_in_credible_region,
    z_scores,
)

FIGURES = (1, 2, 3, 4, 5, 6)
N_DENSITY_DRAWS = 400


def _band(dens):
    return [np.median(dens, axis=0), np.quantile(dens, 0.05, axis=0), np.quantile(dens, 0.95, axis=0)]


def _thin(draws, n=N_DENSITY_DRAWS):
    return draws[:: max(1, draws.shape[0] // n)]


def _gaussian_bands(samples, grid, names):
    """Pointwise bands of N(x | mean, sd) over thinned posterior draws."""
    d = _thin(np.column_stack([samples.column(n) for n in names]))
    return np.exp(IntrinsicModel(d[:, :1], d[:, 1:]).logpdf(grid[None, :]))


def _finish(out, summary, started):
    summary = {**summary, "tool_version": __version__, "wall_time_s": time.perf_counter() - started}
    (Path(out) / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _prepare(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def figure1(out, seed=1, config=SamplerConfig(), n_events=1000, model="narrow"):
    """Remapped posterior of one catalogue and whether it contains the truth."""
    started = time.perf_counter()
    out = _prepare(out)
    preset = PRESETS[model]
    stream = RngStream(seed)
    sel = preset.selection()
    cat = draw_catalog_bernoulli(preset.intrinsic(), sel, n_events, preset.sigma_0, stream.spawn(0))
    theta, lam = fit_and_remap(cat, sel, config, rng=stream.spawn(1))
    cat.to_csv(out / "catalog.csv")
    theta.to_csv(out / "theta_samples.csv")
    lam.to_csv(out / "lambda_samples.csv")
    truth = {"mu_lambda": preset.mu_lambda, "sigma_lambda": preset.sigma_lambda}
    return _finish(out, {
        "figure": 1, "model": model, "n_events": n_events, "seed": seed, "truth": truth,
        "percentile_of_truth": percentile_of_truth(lam, truth),
        "truth_in_90pct_region": truth_in_credible_region(lam, truth, 0.9),
        "n_dropped": lam.n_dropped, "converged": theta.converged,
    }, started)


def figure2(out, seed=1, config=SamplerConfig(), n_events=1000, n_sweeps=800, burn=300, thin=5):
    """Three recipes for the intrinsic density of the narrow model."""
    started = time.perf_counter()
    out = _prepare(out)
    preset = PRESETS["narrow"]
    stream = RngStream(seed)
    intr, sel = preset.intrinsic(), preset.selection()
    cat = draw_catalog_bernoulli(intr, sel, n_events, preset.sigma_0, stream.spawn(0))
    grid = np.linspace(preset.mu_lambda - 6 * preset.sigma_lambda, preset.mu_lambda + 6 * preset.sigma_lambda, 801)

    theta, lam = fit_and_remap(cat, sel, config, rng=stream.spawn(1))
    remap = _gaussian_bands(lam, grid, ("mu_lambda", "sigma_lambda"))
    observed = _gaussian_bands(theta, grid, ("mu_obs", "sigma_obs"))
    divide = np.array([intrinsic_from_observed_grid(DensityGrid(grid, np.log(row)), sel).density
                       for row in observed])
    chain = run_chain(cat, n_sweeps, stream.spawn(2), burn=burn)
    mixture = postprocess_intrinsic(density_draws(chain, grid, thin), sel).densities

    true = np.exp(intr.logpdf(grid))
    cols, header = [grid, true], ["point", "true_pint"]
    for name, dens in (("remap", remap), ("divide", divide), ("dpgmm", mixture)):
        cols += _band(dens)
        header += [f"{name}_median", f"{name}_p05", f"{name}_p95"]
    io.write_table(out / "densities.csv", header, cols)
    return _finish(out, {"figure": 2, "model": "narrow", "n_events": n_events, "seed": seed,
                         "n_sweeps": n_sweeps, "burn": burn, "thin": thin}, started)


def figure3(out, seed=1, config=SamplerConfig(), n_trials=100, n_events=1000, n_jobs=1,
            pipeline="post-processing"):
    """PP trials for every preset population."""
    started = time.perf_counter()
    out = _prepare(out)
    results = {}
    for model in PRESETS:
        res = run_pp_trials(model, n_trials, n_events, pipeline, seed, config, n_jobs)
        res.to_csv(out / f"pp_{model}.csv")
        results[model] = res.summary()
    lo, hi = beta_credible_band(n_trials, 0.9)
    k = np.arange(1, n_trials + 1)
    io.write_table(out / "beta_band.csv", ["rank", "expected", "lower", "upper"], [k, k / (n_trials + 1), lo, hi])
    return _finish(out, {"figure": 3, "n_trials": n_trials, "n_events": n_events, "seed": seed,
                         "pipeline": pipeline, "models": results}, started)


def figure4(out, seed=1, config=SamplerConfig(), n_events=1_000_000, model="equal"):
    """Remapped posterior from a million events, summarised by truth z-scores."""
    started = time.perf_counter()
    out = _prepare(out)
    preset = PRESETS[model]
    stream = RngStream(seed)
    sel = preset.selection()
    cat = draw_catalog_bernoulli(preset.intrinsic(), sel, n_events, preset.sigma_0, stream.spawn(0))
    theta, lam = fit_and_remap(cat, sel, config, rng=stream.spawn(1))
    lam.to_csv(out / "lambda_samples.csv")
    truth = {"mu_lambda": preset.mu_lambda, "sigma_lambda": preset.sigma_lambda}
    return _finish(out, {"figure": 4, "model": model, "n_events": n_events, "seed": seed, "truth": truth,
                         "z_scores": z_scores(lam, truth), "n_dropped": lam.n_dropped,
                         "converged": theta.converged}, started)


def _median_cdf(grid, dens):
    """CDF of the pointwise-median density, as a callable for KS tests."""
    median = DensityGrid(grid, np.log(np.maximum(np.median(dens, axis=0), 1e-300)))
    return lambda x: median.cdf(x)


def figure5(out, seed=1, config=SamplerConfig(), n_events=1000):
    """Truncated fit against the plain Gaussian fit for a step selection.

    Both posterior-median densities are compared with the detected true
    values by a one-sample KS test.
    """
    started = time.perf_counter()
    out = _prepare(out)
    toy = TRUNCATED_TOY
    intr = IntrinsicModel(toy["mu_lambda"], toy["sigma_lambda"])
    sel = StepSelection(toy["threshold"])
    stream = RngStream(seed)
    cat = draw_catalog_bernoulli(intr, sel, n_events, toy["sigma_0"], stream.spawn(0))
    trunc = fit_truncated(cat, toy["threshold"], config, rng=stream.spawn(1))
    plain = fit_observed_gaussian(cat, config, rng=stream.spawn(2))

    lo = toy["mu_lambda"] - 6 * toy["sigma_lambda"]
    hi = toy["mu_lambda"] + 6 * toy["sigma_lambda"]
    grid = np.linspace(lo, hi, 2401)
    t = _thin(trunc.draws)
    trunc_dens = np.exp(TruncatedObserved(t[:, :1], t[:, 1:], toy["threshold"]).logpdf(grid[None, :]))
    p = _thin(plain.draws)
    plain_dens = np.exp(GaussianObserved(p[:, :1], p[:, 1:]).logpdf(grid[None, :]))
    true = observed_density_grid(intr, sel, grid).density

    ks = {}
    for name, dens in (("truncated", trunc_dens), ("gaussian", plain_dens)):
        res = sps.kstest(cat.true_values, _median_cdf(grid, dens))
        ks[name] = {"statistic": float(res.statistic), "p_value": float(res.pvalue)}
    cols = [grid, true, *_band(trunc_dens), *_band(plain_dens)]
    header = ["point", "true_pobs", "truncated_median", "truncated_p05", "truncated_p95",
              "gaussian_median", "gaussian_p05", "gaussian_p95"]
    io.write_table(out / "densities.csv", header, cols)
    cat.to_csv(out / "catalog.csv")
    trunc.to_csv(out / "truncated_samples.csv")
    plain.to_csv(out / "gaussian_samples.csv")
    return _finish(out, {"figure": 5, "n_events": n_events, "seed": seed, "toy": toy, "ks": ks,
                         "converged": {"truncated": trunc.converged, "gaussian": plain.converged}}, started)


def figure6(out, seed=1, n_events=1000, sigma_0=0.3, n_sweeps=1500, burn=500, thin=5,
            mode=LikelihoodMode.THRESHOLD_ON_PARAMETERS):
    """Mixture reconstructions with selection applied at runtime or afterwards."""
    started = time.perf_counter()
    out = _prepare(out)
    preset = PRESETS["narrow"]
    intr, sel = preset.intrinsic(), preset.selection()
    stream = RngStream(seed)
    cat = draw_catalog_bernoulli(intr, sel, n_events, sigma_0, stream.spawn(0))
    mu, sd = preset.mu_lambda, preset.sigma_lambda
    grid = np.linspace(mu - 8 * sd, mu + 8 * sd, 801)

    plain = run_chain(cat, n_sweeps, stream.spawn(1), burn=burn)
    post = postprocess_intrinsic(density_draws(plain, grid, thin), sel)
    runtime = density_draws(run_chain(cat, n_sweeps, stream.spawn(2), sel=sel, mode=mode, burn=burn), grid, thin)

    true = np.exp(intr.logpdf(grid))
    inner = (grid >= mu - 3 * sd) & (grid <= mu + 3 * sd)
    coverage = {}
    for name, d in (("runtime", runtime), ("postprocessed", post)):
        coverage[name] = float(np.mean((true[inner] >= d.p05[inner]) & (true[inner] <= d.p95[inner])))
    js = jensen_shannon(runtime.median, post.median, grid)

    cols = [grid, true, runtime.median, runtime.p05, runtime.p95, post.median, post.p05, post.p95]
    header = ["point", "true_pint", "runtime_median", "runtime_p05", "runtime_p95",
              "postprocessed_median", "postprocessed_p05", "postprocessed_p95"]
    io.write_table(out / "densities.csv", header, cols)
    return _finish(out, {"figure": 6, "n_events": n_events, "sigma_0": sigma_0, "seed": seed,
                         "n_sweeps": n_sweeps, "burn": burn, "thin": thin, "mode": LikelihoodMode(mode).value,
                         "js_divergence": js, "band_coverage": coverage}, started)


def reproduce(number, out, **kwargs):
    funcs = {1: figure1, 2: figure2, 3: figure3, 4: figure4, 5: figure5, 6: figure6}
    return funcs[int(number)](out, **kwargs)
