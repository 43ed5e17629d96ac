"""Command-line entry points.

Two subcommands: ``fit`` reads a two-column delimited file and writes
the fitted model, a plot-ready table, a text summary, and a figure;
``simulate`` runs a replicated study on synthetic data and writes its
report. Exit status is 0 on success, 2 on input problems, and 3 when
the fit ran but did not converge (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import replace

from . import io
from .engine import FitConfig, attach_stderr, fit_series, select_j_aic
from .errors import (
    EmptyFile,
    EmptyGroup,
    IoError,
    NonPositiveU,
    ParseError,
    SwitchregError,
    TooFewPoints,
    UnresolvableTies,
)
from .model import ObservedSeries
from .simulate import run_study

INPUT_ERRORS = (
    ParseError,
    EmptyFile,
    UnresolvableTies,
    NonPositiveU,
    IoError,
    TooFewPoints,
    EmptyGroup,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchreg",
        description="Fit switching nonparametric regression models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one observed series from a CSV file")
    fit.add_argument("--config", help="JSON file with defaults for the flags below")
    fit.add_argument("--input", help="two-column delimited file")
    fit.add_argument("--approach", choices=("penalized", "bayes"))
    fit.add_argument("--latent", choices=("iid", "markov"))
    fit.add_argument("--j", type=int, help="number of regimes")
    fit.add_argument(
        "--select-j",
        metavar="MIN..MAX",
        help="choose the number of regimes by information criterion",
    )
    fit.add_argument("--seed", type=int, help="tie-breaking seed (default 0)")
    fit.add_argument("--out", help="output directory")

    sim = sub.add_parser("simulate", help="run a replicated synthetic study")
    sim.add_argument("--config", help="JSON file with defaults for the flags below")
    sim.add_argument("--design", type=int, choices=(1, 2, 3))
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--approach", choices=("penalized", "bayes"))
    sim.add_argument("--seed", type=int, help="replicate stream seed (default 0)")
    sim.add_argument("--out", help="output directory")
    return parser


REQUIRED = {
    "fit": ("input", "approach", "latent", "out"),
    "simulate": ("design", "replicates", "approach", "out"),
}

CHOICES = {
    "approach": ("penalized", "bayes"),
    "latent": ("iid", "markov"),
    "design": (1, 2, 3),
}


def _merge_config(args, parser) -> None:
    """Fill unset flags from the JSON config file; flags given on the
    command line win. Validates merged values that argparse could not
    see, then enforces the per-command required set."""
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            parser.error("config file must hold a JSON object")
        known = set(vars(args)) - {"command", "config"}
        for key, value in loaded.items():
            name = key.replace("-", "_")
            if name not in known:
                parser.error(f"unknown config key {key!r}")
            if getattr(args, name) is None:
                setattr(args, name, value)
    for name in ("j", "seed", "design", "replicates"):
        value = getattr(args, name, None)
        if value is not None and not isinstance(value, int):
            parser.error(f"{name} must be an integer, got {value!r}")
    for name, allowed in CHOICES.items():
        value = getattr(args, name, None)
        if value is not None and value not in allowed:
            parser.error(f"{name} must be one of {allowed}, got {value!r}")
    for name in REQUIRED[args.command]:
        if getattr(args, name) is None:
            parser.error(f"--{name.replace('_', '-')} is required")
    if args.seed is None:
        args.seed = 0


def _parse_j_range(text: str, parser: argparse.ArgumentParser):
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text.strip())
    if not m:
        parser.error(f"--select-j expects MIN..MAX, got {text!r}")
    lo, hi = int(m.group(1)), int(m.group(2))
    if lo < 1 or hi > 8 or lo > hi:
        parser.error(f"--select-j range must satisfy 1 <= MIN <= MAX <= 8, got {text!r}")
    return range(lo, hi + 1)


def _run_fit(args, parser) -> int:
    if args.select_j is None and args.j is None:
        parser.error("one of --j or --select-j is required")
    x, y = io.load_csv(args.input)
    x, y = io.jitter_duplicates(x, y, args.seed)
    series = ObservedSeries(x=x, y=y)

    kw = dict(approach=args.approach, latent=args.latent)
    if args.approach == "bayes":
        kw.update(u_rule="fixed", u_fixed=io.estimate_signal_variance(x, y))
    selection = None
    if args.select_j is not None:
        j_range = _parse_j_range(args.select_j, parser)
        config = FitConfig(j=j_range[0], **kw)
        sel = select_j_aic(series, config, j_range)
        if sel.best is None:
            for j, msg in sorted(sel.failures.items()):
                print(f"regimes {j}: {msg}", file=sys.stderr)
            print("no candidate fit succeeded", file=sys.stderr)
            return 1
        config = replace(config, j=sel.best)
        result = attach_stderr(series, sel.results[sel.best])
        selection = {
            "aic": {str(j): v for j, v in sorted(sel.aic.items())},
            "failures": dict(sorted(sel.failures.items())),
            "best": sel.best,
        }
    else:
        config = FitConfig(j=args.j, **kw)
        result = fit_series(series, config)

    io.write_fit_outputs(args.out, series, result, config, selection)
    if not result.converged:
        print("fit did not converge; outputs written", file=sys.stderr)
        return 3
    return 0


def _run_simulate(args) -> int:
    report = run_study(
        design=args.design,
        approach=args.approach,
        n_replicates=args.replicates,
        seed=args.seed,
    )
    io.write_sim_outputs(args.out, report)
    if report.completed == 0:
        print("every replicate failed", file=sys.stderr)
        return 1
    for idx, msg in report.failures:
        print(f"replicate {idx} failed: {msg}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config(args, parser)
        if args.command == "fit":
            return _run_fit(args, parser)
        return _run_simulate(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SwitchregError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main(argv=sys.argv[1:]))
