"""Reading observed series and writing fit and study outputs.

CSV parsing is deliberately hand-rolled and strict: the first two
columns are abscissa and response, a non-numeric first row is treated as
a header, and any other malformed content names its line number in the
error. Output JSON is emitted with sorted keys and no timestamps, so a
rerun with the same inputs produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .engine import FitConfig, FitResult, aic_value, smooth_spline_gcv
from .errors import (
    EmptyFile,
    IoError,
    NonPositiveU,
    ParseError,
    TooFewPoints,
    UnresolvableTies,
)
from .model import IIDStates, ObservedSeries

JITTER_REDRAWS = 10


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """First two columns of a delimited file as float arrays.

    A first row whose cells do not all parse as numbers is taken to be a
    header and skipped; any later unparsable row is an error naming the
    line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    xs: list[float] = []
    ys: list[float] = []
    rows = list(csv.reader(text.splitlines()))
    start = 0
    if rows and rows[0] and not _numeric_row(rows[0]):
        start = 1
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or all(cell.strip() == "" for cell in row):
            continue
        if len(row) < 2:
            raise ParseError(f"line {lineno}: expected at least two columns")
        try:
            xs.append(float(row[0]))
            ys.append(float(row[1]))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
    if not xs:
        raise EmptyFile(f"{path} holds no data rows")
    return np.asarray(xs), np.asarray(ys)


def _numeric_row(row) -> bool:
    try:
        for cell in row:
            float(cell)
    except ValueError:
        return False
    return True


def jitter_duplicates(
    x: np.ndarray, y: np.ndarray, seed: int | None = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Break tied abscissas by small uniform perturbations.

    Points are sorted by x; each member of a tie group is moved by a
    draw from (-g/100, g/100) where g is the smallest positive gap, and
    the draw is repeated a few times if it happens to recreate a tie.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    gaps = np.diff(xs)
    pos = gaps[gaps > 0]
    if np.all(gaps > 0):
        return xs, ys
    if pos.size == 0:
        raise UnresolvableTies("all abscissas are identical")
    scale = float(pos.min()) / 100.0
    tied = np.zeros(xs.size, dtype=bool)
    tied[1:] |= gaps == 0
    tied[:-1] |= gaps == 0
    rng = np.random.default_rng(seed)
    for _ in range(JITTER_REDRAWS):
        cand = xs.copy()
        cand[tied] += rng.uniform(-scale, scale, int(tied.sum()))
        o2 = np.argsort(cand, kind="stable")
        cand, ycand = cand[o2], ys[o2]
        if np.all(np.diff(cand) > 0):
            return cand, ycand
    raise UnresolvableTies(f"ties persisted after {JITTER_REDRAWS} redraws")


def estimate_signal_variance(x: np.ndarray, y: np.ndarray) -> float:
    """Marginal response variance minus the noise variance implied by a
    single cross-validated spline fit; used to hold the kernel signal
    variance fixed when fitting real data with the kernel approach."""
    n = np.asarray(y).size
    if n < 10:
        raise TooFewPoints(f"need at least 10 points to split the variance, got {n}")
    fit = smooth_spline_gcv(np.asarray(x, float), np.asarray(y, float))
    noise = fit.rss / max(n - fit.hat_trace, 1.0)
    u = float(np.var(y, ddof=1) - noise)
    if u <= 0:
        raise NonPositiveU(
            "response variance does not exceed the residual noise estimate"
        )
    return u


def motorcycle_series(seed: int | None = 0) -> ObservedSeries:
    """The packaged impact-test series with tied times jittered."""
    ref = resources.files("switchreg").joinpath("data/motorcycle.csv")
    with resources.as_file(ref) as path:
        x, y = load_csv(path)
    x, y = jitter_duplicates(x, y, seed)
    return ObservedSeries(x=x, y=y)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def fit_result_dict(
    series: ObservedSeries,
    result: FitResult,
    config: FitConfig,
    selection: dict | None = None,
) -> dict:
    latent = result.theta.latent
    if isinstance(latent, IIDStates):
        latent_params = {"p": latent.p.tolist()}
    else:
        latent_params = {"pi": latent.pi.tolist(), "a": latent.a.tolist()}
    out = {
        "approach": config.approach,
        "latent": config.latent,
        "j": config.j,
        "n": series.n,
        "converged": result.converged,
        "n_iter": result.n_iter,
        "flags": list(result.flags),
        "loglik": result.loglik,
        "criterion": result.criterion_final,
        "criterion_trace": result.trace.tolist(),
        "aic": aic_value(result, config),
        "aic_components": {
            "hat_trace_total": float(np.sum(result.hat_trace)),
            "n_variances": 1 if config.shared_variance else config.j,
            "free_latent": config.j - 1,
        },
        "lambdas": np.asarray(result.lambdas, dtype=float).tolist(),
        "variances": result.theta.noise.variances.tolist(),
        "shared_variance": config.shared_variance,
        "latent_params": latent_params,
        "hat_trace": result.hat_trace.tolist(),
        "stderr": result.stderr.to_dict() if result.stderr is not None else None,
    }
    if selection is not None:
        out["selection"] = selection
    return out


def write_fit_outputs(
    out_dir,
    series: ObservedSeries,
    result: FitResult,
    config: FitConfig,
    selection: dict | None = None,
) -> None:
    """result.json, plotdata.csv, summary.txt, fit.png in out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "result.json", fit_result_dict(series, result, config, selection))

    j = config.j
    with open(out / "plotdata.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["x", "y"]
            + [f"fhat_{k + 1}" for k in range(j)]
            + [f"p_{k + 1}" for k in range(j)]
            + ["zmax"]
        )
        zmax = np.argmax(result.resp.p, axis=1) + 1
        for i in range(series.n):
            w.writerow(
                [repr(float(series.x[i])), repr(float(series.y[i]))]
                + [repr(float(result.fitted[i, k])) for k in range(j)]
                + [repr(float(result.resp.p[i, k])) for k in range(j)]
                + [int(zmax[i])]
            )

    (out / "summary.txt").write_text(_summary_text(series, result, config))

    from . import plots

    plots.plot_fit(series, result, out / "fit.png")


def _summary_text(series, result, config) -> str:
    lines = [
        f"approach: {config.approach}   latent: {config.latent}   regimes: {config.j}",
        f"points: {series.n}   converged: {result.converged}   iterations: {result.n_iter}",
        f"loglik: {result.loglik:.6g}   criterion: {result.criterion_final:.6g}"
        f"   aic: {aic_value(result, config):.6g}",
        "",
        f"{'regime':>6} {'lambda':>12} {'sigma2':>12} {'mass':>8}",
    ]
    mass = result.resp.p.mean(axis=0)
    lam = np.asarray(result.lambdas, dtype=float)
    for k in range(config.j):
        lines.append(
            f"{k + 1:>6} {lam[k]:>12.6g} "
            f"{result.theta.noise.variances[k]:>12.6g} {mass[k]:>8.4f}"
        )
    lines.append("")
    latent = result.theta.latent
    if isinstance(latent, IIDStates):
        lines.append("state probabilities: " + _fmt_vec(latent.p))
    else:
        lines.append("initial state probabilities: " + _fmt_vec(latent.pi))
        lines.append("transition matrix:")
        for row in latent.a:
            lines.append("  " + _fmt_vec(row))
    if result.stderr is not None:
        pairs = ", ".join(
            f"se({lab}) = {se:.4g}"
            for lab, se in zip(result.stderr.labels, result.stderr.se)
        )
        lines.append("standard errors: " + pairs)
        if result.stderr.se_last is not None:
            lines.append(f"implied se of the last proportion: {result.stderr.se_last:.4g}")
    if result.flags:
        lines.append("flags: " + ", ".join(result.flags))
    return "\n".join(lines) + "\n"


def _fmt_vec(v) -> str:
    return "[" + ", ".join(f"{float(t):.4f}" for t in v) + "]"


def write_sim_outputs(out_dir, report) -> None:
    """study.json, replicates.csv, emse.csv, emse.png in out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "study.json", report.to_json_dict())

    labels = report.labels
    with open(out / "replicates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["index"]
            + list(labels)
            + [f"se_{k}" for k in labels]
            + [
                "sigma2",
                "emse_initial_total",
                "emse_final_total",
                "points_1_given_2",
                "points_2_given_1",
                "converged",
            ]
        )
        for o in report.outcomes:
            w.writerow(
                [o.index]
                + [repr(o.params[k]) for k in labels]
                + [repr(o.se[k]) for k in labels]
                + [
                    repr(o.sigma2),
                    repr(float(sum(o.emse_initial))),
                    repr(float(sum(o.emse_final))),
                    o.points_1_given_2,
                    o.points_2_given_1,
                    int(o.converged),
                ]
            )

    with open(out / "emse.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["index", "initial_1", "initial_2", "final_1", "final_2"]
        )
        for o in report.outcomes:
            w.writerow(
                [o.index]
                + [repr(float(v)) for v in o.emse_initial]
                + [repr(float(v)) for v in o.emse_final]
            )

    from . import plots

    plots.plot_emse(report, out / "emse.png")
