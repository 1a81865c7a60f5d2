"""Command-line interface.

Exit codes: 0 on success, 1 for usage or input errors, 2 for numerical or
convergence failures. Every command writes a ``.meta.json`` sidecar next
to its primary output with the tool version, resolved configuration,
seed and wall time.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__, figures, io
from .dpgmm import density_draws, postprocess_intrinsic, run_chain
from .errors import DomainError, NumericalError, PopselError
from .fit import fit_intrinsic, fit_observed_gaussian, fit_truncated
from .likelihood import LikelihoodMode
from .population import PRESETS, TRUNCATED_TOY, GaussianSelection, IntrinsicModel, PopulationPreset, StepSelection
from .sampler import PosteriorSamples, SamplerConfig, remap_samples
from .simulate import Catalog, draw_catalog_bernoulli
from .stats import RngStream
from .validate import run_pp_trials

SEED_ENV = "POPSEL_SEED"


class UsageError(PopselError):
    """Bad command line, config file or input path."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_selection(text):
    """Parse ``mu_d=0,sigma_d=2[,convention=density]``, ``threshold=-1`` or ``none``."""
    if text is None or text.strip().lower() == "none":
        return None
    try:
        pairs = dict(item.split("=", 1) for item in text.split(","))
    except ValueError:
        raise UsageError(f"malformed selection {text!r}; expected key=value pairs") from None
    pairs = {k.strip(): v.strip() for k, v in pairs.items()}
    try:
        if set(pairs) == {"threshold"}:
            return StepSelection(float(pairs["threshold"]))
        if set(pairs) in ({"mu_d", "sigma_d"}, {"mu_d", "sigma_d", "convention"}):
            return GaussianSelection(float(pairs["mu_d"]), float(pairs["sigma_d"]),
                                     pairs.get("convention", "unit_peak"))
    except ValueError as exc:
        raise UsageError(f"malformed selection {text!r}: {exc}") from None
    raise UsageError(f"unrecognised selection keys {sorted(pairs)}")


def load_config(path):
    """Read a JSON run configuration.

    Recognised sections: ``seed``, ``sampler`` (SamplerConfig fields),
    ``dpgmm`` (n_sweeps, burn, thin, concentration) and ``populations``
    (named presets with mu_lambda, sigma_lambda, mu_d, sigma_d, sigma_0).
    """
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    unknown = set(cfg) - {"seed", "sampler", "dpgmm", "populations"}
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}")
    allowed = {f.name for f in fields(SamplerConfig)} - {"seed"}
    if set(cfg.get("sampler", {})) - allowed:
        raise UsageError(f"unknown sampler keys {sorted(set(cfg['sampler']) - allowed)}")
    return cfg


def _presets(cfg):
    presets = dict(PRESETS)
    for name, block in cfg.get("populations", {}).items():
        try:
            presets[name] = PopulationPreset(name, **{k: float(v) for k, v in block.items()})
        except TypeError as exc:
            raise UsageError(f"population {name!r}: {exc}") from None
    return presets


def _seed(args, cfg):
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _sampler_config(args, cfg, seed):
    block = dict(cfg.get("sampler", {}))
    for key, attr in (("n_walkers", "walkers"), ("n_steps", "steps"), ("n_burn", "burn")):
        value = getattr(args, attr, None)
        if value is not None:
            block[key] = value
    return SamplerConfig(seed=seed, **block)


def _require_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} {path} does not exist")
    return path


def _out_path(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _run_meta(args, seed, started, **resolved):
    return {"command": args.command, "argv": args.argv, "seed": seed,
            "resolved_config": resolved, "wall_time_s": time.perf_counter() - started}


# -- commands -----------------------------------------------------------------

def cmd_simulate(args, cfg, seed, started):
    presets = _presets(cfg)
    if args.model == "truncated":
        intr = IntrinsicModel(TRUNCATED_TOY["mu_lambda"], TRUNCATED_TOY["sigma_lambda"])
        sel, sigma_0 = StepSelection(TRUNCATED_TOY["threshold"]), TRUNCATED_TOY["sigma_0"]
    elif args.model in presets:
        p = presets[args.model]
        intr, sel, sigma_0 = p.intrinsic(), p.selection(), p.sigma_0
    else:
        raise UsageError(f"unknown model {args.model!r}; choose from {sorted(presets) + ['truncated']}")
    if args.sigma0 is not None:
        sigma_0 = args.sigma0
    cat = draw_catalog_bernoulli(intr, sel, args.n, sigma_0, RngStream(seed),
                                 select_on_observed=args.select_on_observed)
    out = _out_path(args.out)
    cat.to_csv(out)
    meta = io.read_metadata(io.metadata_path(out))
    meta.update(_run_meta(args, seed, started, model=args.model, n=args.n, sigma_0=sigma_0))
    io.write_metadata(io.metadata_path(out), meta)


def _write_samples(samples, args, seed, started, **resolved):
    samples.to_csv(_out_path(args.out), extra_metadata=_run_meta(args, seed, started, **resolved))


def cmd_fit_observed(args, cfg, seed, started):
    cat = Catalog.from_csv(_require_file(args.catalog, "catalogue"))
    config = _sampler_config(args, cfg, seed)
    if args.observed_model == "truncated":
        if args.threshold is None:
            raise UsageError("--observed-model truncated needs --threshold")
        samples = fit_truncated(cat, args.threshold, config)
    else:
        samples = fit_observed_gaussian(cat, config)
    _write_samples(samples, args, seed, started, sampler=asdict(config),
                   observed_model=args.observed_model, threshold=args.threshold)


def cmd_fit_intrinsic(args, cfg, seed, started):
    cat = Catalog.from_csv(_require_file(args.catalog, "catalogue"))
    sel = parse_selection(args.selection)
    config = _sampler_config(args, cfg, seed)
    samples = fit_intrinsic(cat, sel, config, mode=LikelihoodMode(args.mode))
    _write_samples(samples, args, seed, started, sampler=asdict(config),
                   selection=None if sel is None else sel.describe(), mode=args.mode)


def cmd_remap(args, cfg, seed, started):
    samples = PosteriorSamples.from_csv(_require_file(args.samples, "samples file"))
    sel = parse_selection(args.selection)
    if not isinstance(sel, GaussianSelection):
        raise UsageError("remap needs a Gaussian selection (mu_d=...,sigma_d=...)")
    out = remap_samples(samples, sel)
    _write_samples(out, args, seed, started, selection=sel.describe(), source=str(args.samples))


def cmd_dpgmm(args, cfg, seed, started):
    cat = Catalog.from_csv(_require_file(args.catalog, "catalogue"))
    sel = parse_selection(args.selection)
    block = {"n_sweeps": 1500, "burn": 500, "thin": 5, "concentration": 1.0, **cfg.get("dpgmm", {})}
    for key in ("sweeps", "burn", "thin"):
        value = getattr(args, f"dp_{key}")
        if value is not None:
            block["n_sweeps" if key == "sweeps" else key] = value
    if args.correction != "none" and sel is None:
        raise UsageError(f"--correction {args.correction} needs --selection")
    lo, hi, n = args.grid
    grid = np.linspace(lo, hi, int(n))
    stream = RngStream(seed)
    runtime_sel = sel if args.correction == "runtime" else None
    chain = run_chain(cat, int(block["n_sweeps"]), stream.spawn(0), sel=runtime_sel,
                      mode=LikelihoodMode(args.mode), burn=int(block["burn"]),
                      concentration=float(block["concentration"]))
    draws = density_draws(chain, grid, int(block["thin"]))
    if args.correction == "postprocess":
        draws = postprocess_intrinsic(draws, sel)
    out = _out_path(args.out)
    draws.to_csv(out, include_draws=args.include_draws)
    io.write_metadata(io.metadata_path(out), _run_meta(
        args, seed, started, dpgmm=block, correction=args.correction, mode=args.mode,
        selection=None if sel is None else sel.describe(), grid=[lo, hi, int(n)],
        n_capped=int(chain[-1].n_capped)))


def cmd_ppplot(args, cfg, seed, started):
    config = _sampler_config(args, cfg, seed)
    res = run_pp_trials(args.model, args.trials, args.events, args.pipeline, seed, config, args.threads)
    out = _out_path(args.out)
    res.to_csv(out)
    meta = io.read_metadata(io.metadata_path(out))
    meta.update(_run_meta(args, seed, started, sampler=asdict(config), threads=args.threads))
    io.write_metadata(io.metadata_path(out), meta)
    if not res.passed:
        print(f"ppplot: uniformity check failed for {args.model} ({args.pipeline})", file=sys.stderr)


def cmd_reproduce(args, cfg, seed, started):
    kwargs = {"seed": seed}
    if args.figure in (1, 2, 3, 4, 5):
        kwargs["config"] = _sampler_config(args, cfg, seed)
    if args.figure == 3:
        kwargs["n_jobs"] = args.threads
        if args.trials is not None:
            kwargs["n_trials"] = args.trials
    if args.figure in (2, 6):
        for key in ("sweeps", "burn", "thin"):
            value = getattr(args, f"dp_{key}", None)
            if value is None:
                value = cfg.get("dpgmm", {}).get("n_sweeps" if key == "sweeps" else key)
            if value is not None:
                kwargs["n_sweeps" if key == "sweeps" else key] = value
    if args.figure in (1, 2, 3, 4, 5) and args.events is not None:
        kwargs["n_events"] = args.events
    summary = figures.reproduce(args.figure, args.out, **kwargs)
    meta = _run_meta(args, seed, started, figure=args.figure,
                     **{k: (asdict(v) if isinstance(v, SamplerConfig) else v)
                        for k, v in kwargs.items() if k != "seed"})
    io.write_metadata(Path(args.out) / "run.meta.json", {**meta, "summary": summary})


# -- parser -------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help=f"base seed (env {SEED_ENV} overrides)")
    p.add_argument("--config", default=None, help="JSON run configuration")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes")


def _add_sampler(p):
    p.add_argument("--walkers", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--burn", type=int, default=None, help="discarded steps (default: half)")


def _add_dpgmm(p):
    p.add_argument("--sweeps", dest="dp_sweeps", type=int, default=None)
    p.add_argument("--dp-burn", dest="dp_burn", type=int, default=None)
    p.add_argument("--thin", dest="dp_thin", type=int, default=None)


def _grid(text):
    try:
        lo, hi, n = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("grid must be lo,hi,n") from None
    if not (hi > lo and n >= 2):
        raise argparse.ArgumentTypeError("grid needs hi > lo and n >= 2")
    return lo, hi, n


def build_parser():
    parser = _Parser(prog="popsel", description="Population inference with selection effects.")
    parser.add_argument("--version", action="version", version=f"popsel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    modes = [m.value for m in LikelihoodMode]

    p = sub.add_parser("simulate", help="draw a detected catalogue")
    p.add_argument("--model", required=True, help="wide, narrow, equal, truncated or a config population")
    p.add_argument("--n", type=int, required=True, help="number of detections")
    p.add_argument("--sigma0", type=float, default=None, help="override the noise width")
    p.add_argument("--select-on-observed", action="store_true", help="negative control: select on noisy values")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("fit-observed", help="sample the observed-distribution posterior")
    p.add_argument("--catalog", required=True)
    p.add_argument("--observed-model", choices=("gaussian", "truncated"), default="gaussian")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    _add_sampler(p)

    p = sub.add_parser("fit-intrinsic", help="sample the intrinsic posterior with alpha in the likelihood")
    p.add_argument("--catalog", required=True)
    p.add_argument("--selection", required=True, help="mu_d=..,sigma_d=.. | threshold=.. | none")
    p.add_argument("--mode", choices=modes, default=LikelihoodMode.THRESHOLD_ON_PARAMETERS.value)
    p.add_argument("--out", required=True)
    _add_common(p)
    _add_sampler(p)

    p = sub.add_parser("remap", help="map observed-parameter draws to intrinsic parameters")
    p.add_argument("--samples", required=True)
    p.add_argument("--selection", required=True, help="mu_d=..,sigma_d=..")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("dpgmm", help="non-parametric density reconstruction")
    p.add_argument("--catalog", required=True)
    p.add_argument("--selection", default=None)
    p.add_argument("--correction", choices=("none", "runtime", "postprocess"), default="none")
    p.add_argument("--mode", choices=modes, default=LikelihoodMode.THRESHOLD_ON_PARAMETERS.value)
    p.add_argument("--grid", type=_grid, default=(-10.0, 10.0, 801), help="lo,hi,n (write --grid=-6,4,101 when lo is negative)")
    p.add_argument("--include-draws", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    _add_dpgmm(p)

    p = sub.add_parser("ppplot", help="PP trials for one preset population")
    p.add_argument("--model", choices=sorted(PRESETS), required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--events", type=int, default=1000)
    p.add_argument("--pipeline", choices=("post-processing", "in-likelihood"), default="post-processing")
    p.add_argument("--out", required=True)
    _add_common(p)
    _add_sampler(p)

    p = sub.add_parser("reproduce-figure", help="emit the data behind one figure")
    p.add_argument("figure", type=int, choices=figures.FIGURES)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trials", type=int, default=None, help="figure 3 only")
    p.add_argument("--events", type=int, default=None)
    _add_common(p)
    _add_sampler(p)
    _add_dpgmm(p)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-observed": cmd_fit_observed,
    "fit-intrinsic": cmd_fit_intrinsic,
    "remap": cmd_remap,
    "dpgmm": cmd_dpgmm,
    "ppplot": cmd_ppplot,
    "reproduce-figure": cmd_reproduce,
}


def _one_line(exc):
    return " ".join(str(exc).split()) or type(exc).__name__


def run_command(argv=None):
    """Run one command and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        cfg = load_config(args.config)
        seed = _seed(args, cfg)
        COMMANDS[args.command](args, cfg, seed, started)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except NumericalError as exc:
        print(f"popsel: numerical failure: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (UsageError, DomainError, OSError, ValueError, TypeError) as exc:
        print(f"popsel: error: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())
