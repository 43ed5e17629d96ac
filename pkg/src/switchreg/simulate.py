"""Replicated studies on synthetic switching series.

Three designs share one pair of true regime curves, drawn once per study
from the kernel prior on a fixed grid of 199 points, and differ in the
law of the state sequence: independent states favoring regime 1, a chain
that mixes quickly, and a chain that dwells long in each state. Each
replicate redraws the states and the noise, refits from scratch, and
records parameter estimates, standard errors, pointwise curve error, and
the points whose posterior puts appreciable weight on the wrong state.

Replicates are seeded from spawned generator streams, so a study is
reproducible for a given seed no matter how many worker processes run.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import stderrs
from .basis import add_nugget, kernel_gram
from .engine import FitConfig, make_initial, select_lambda_gcv
from .errors import SwitchregError
from .model import ObservedSeries

GRID = np.arange(1.0, 100.5, 0.5)
TRUE_S = (28.0, 38.0)
TRUE_SIGMA2 = 5e-5
WRONG_STATE_LEVEL = 0.2

Z90 = float(norm.ppf(0.95))
Z95 = float(norm.ppf(0.975))

DESIGNS = {
    1: {"latent": "iid", "p1": 0.7},
    2: {"latent": "markov", "a12": 0.3, "a21": 0.4},
    3: {"latent": "markov", "a12": 0.1, "a21": 0.2},
}
DWELL_SUBINTERVALS = ((1.0, 34.0), (34.5, 67.5), (68.0, 100.0))


def study_config(design: int, approach: str) -> FitConfig:
    """Fit controls for one design: the latent family matches the
    generating law, the variance is shared, and the slow-mixing design
    initializes from residual clustering because the overall curve
    tracks single regimes for long stretches there."""
    if design not in DESIGNS:
        raise ValueError(f"design must be 1, 2, or 3, got {design}")
    return FitConfig(
        approach=approach,
        latent=DESIGNS[design]["latent"],
        j=2,
        shared_variance=True,
        init="residual-based" if design == 3 else "function-estimate",
        subintervals=DWELL_SUBINTERVALS if design == 3 else None,
    )


def true_params(design: int) -> dict[str, float]:
    spec = DESIGNS[design]
    if spec["latent"] == "iid":
        return {"p_1": spec["p1"]}
    return {"a_12": spec["a12"], "a_21": spec["a21"]}


def sample_truth(rng: np.random.Generator, x: np.ndarray = GRID) -> np.ndarray:
    """One pair of regime curves from the kernel prior, tied scale."""
    n = x.size
    truth = np.empty((2, n))
    for j, s in enumerate(TRUE_S):
        u = 1.0 / (s * np.sqrt(2.0 * np.pi))
        chol = np.linalg.cholesky(add_nugget(kernel_gram(x, u, s)))
        truth[j] = chol @ rng.standard_normal(n)
    return truth


def sample_states(rng: np.random.Generator, design: int, n: int) -> np.ndarray:
    spec = DESIGNS[design]
    if spec["latent"] == "iid":
        return (rng.random(n) >= spec["p1"]).astype(int)
    a = np.array(
        [[1.0 - spec["a12"], spec["a12"]], [spec["a21"], 1.0 - spec["a21"]]]
    )
    z = np.empty(n, dtype=int)
    u = rng.random(n)
    z[0] = 0 if u[0] < 0.5 else 1
    for i in range(1, n):
        z[i] = 0 if u[i] < a[z[i - 1], 0] else 1
    return z


def generate_replicate(
    rng: np.random.Generator,
    truth: np.ndarray,
    design: int,
    x: np.ndarray = GRID,
    sigma2: float = TRUE_SIGMA2,
) -> tuple[np.ndarray, np.ndarray]:
    """State path and observed series for one replicate."""
    n = x.size
    z = sample_states(rng, design, n)
    y = truth[z, np.arange(n)] + rng.normal(0.0, np.sqrt(sigma2), n)
    return z, y


@dataclass(frozen=True)
class ReplicateOutcome:
    """Everything retained from one fitted replicate, labels aligned to
    the true regimes by the permutation minimizing final curve error."""

    index: int
    params: dict[str, float]
    se: dict[str, float]
    cover90: dict[str, bool]
    cover95: dict[str, bool]
    sigma2: float
    emse_initial: tuple[float, float]
    emse_final: tuple[float, float]
    points_1_given_2: int
    points_2_given_1: int
    converged: bool
    flags: tuple[str, ...]


def _emse(cols: np.ndarray, truth: np.ndarray, perm: tuple[int, int]) -> tuple:
    return tuple(
        float(np.mean((cols[:, perm[j]] - truth[j]) ** 2)) for j in range(2)
    )


def _replicate_outcome(
    x: np.ndarray,
    truth: np.ndarray,
    design: int,
    approach: str,
    seed: np.random.SeedSequence,
    index: int,
) -> ReplicateOutcome:
    rng = np.random.default_rng(seed)
    z, y = generate_replicate(rng, truth, design, x)
    series = ObservedSeries(x=x, y=y)
    config = study_config(design, approach)
    theta0 = make_initial(series, config)
    init_means = theta0.funcs.means(x)
    res = select_lambda_gcv(series, config, theta0)
    info = stderrs.from_fit(series, res)

    perms = ((0, 1), (1, 0))
    totals = [sum(_emse(res.fitted, truth, p)) for p in perms]
    perm = perms[int(np.argmin(totals))]
    swapped = perm == (1, 0)

    targets = true_params(design)
    if config.latent == "iid":
        p_vec = res.theta.latent.p[list(perm)]
        params = {"p_1": float(p_vec[0])}
        se = {"p_1": float(info.se_last if swapped else info.se[0])}
    else:
        a_al = res.theta.latent.a[np.ix_(perm, perm)]
        params = {"a_12": float(a_al[0, 1]), "a_21": float(a_al[1, 0])}
        se_pair = info.se[::-1] if swapped else info.se
        se = {"a_12": float(se_pair[0]), "a_21": float(se_pair[1])}

    cover90 = {
        k: bool(abs(params[k] - targets[k]) <= Z90 * se[k]) for k in targets
    }
    cover95 = {
        k: bool(abs(params[k] - targets[k]) <= Z95 * se[k]) for k in targets
    }

    post = res.resp.p[:, list(perm)]
    n12 = int(np.sum((z == 1) & (post[:, 0] > WRONG_STATE_LEVEL)))
    n21 = int(np.sum((z == 0) & (post[:, 1] > WRONG_STATE_LEVEL)))

    return ReplicateOutcome(
        index=index,
        params=params,
        se=se,
        cover90=cover90,
        cover95=cover95,
        sigma2=float(res.theta.noise.variances[0]),
        emse_initial=_emse(init_means, truth, perm),
        emse_final=_emse(res.fitted, truth, perm),
        points_1_given_2=n12,
        points_2_given_1=n21,
        converged=res.converged,
        flags=res.flags,
    )


def _replicate_task(args):
    x, truth, design, approach, seed, index = args
    try:
        return _replicate_outcome(x, truth, design, approach, seed, index)
    except SwitchregError as exc:
        return (index, f"{type(exc).__name__}: {exc}")


@dataclass
class SimStudyReport:
    """A finished study: the shared truth, per-replicate outcomes in
    replicate order, and the failures that were recorded and skipped."""

    design: int
    approach: str
    seed: int
    n_replicates: int
    x: np.ndarray
    truth: np.ndarray
    outcomes: list[ReplicateOutcome]
    failures: list[tuple[int, str]]

    @property
    def completed(self) -> int:
        return len(self.outcomes)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(true_params(self.design)))

    def param_summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for k in self.labels:
            est = np.array([o.params[k] for o in self.outcomes])
            ses = np.array([o.se[k] for o in self.outcomes])
            out[k] = {
                "mean": float(est.mean()),
                "sd": float(est.std(ddof=1)) if est.size > 1 else 0.0,
                "se_mean": float(ses.mean()),
                "coverage90": 100.0
                * float(np.mean([o.cover90[k] for o in self.outcomes])),
                "coverage95": 100.0
                * float(np.mean([o.cover95[k] for o in self.outcomes])),
                "truth": true_params(self.design)[k],
            }
        return out

    def sigma2_summary(self) -> dict[str, float]:
        vals = np.array([o.sigma2 for o in self.outcomes])
        return {
            "mean": float(vals.mean()),
            "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            "truth": TRUE_SIGMA2,
        }

    def emse_summary(self) -> dict:
        init = np.array([o.emse_initial for o in self.outcomes])
        fin = np.array([o.emse_final for o in self.outcomes])
        improved = np.sum(fin.sum(axis=1) < init.sum(axis=1))
        return {
            "initial_mean": [float(v) for v in init.mean(axis=0)],
            "final_mean": [float(v) for v in fin.mean(axis=0)],
            "improved_fraction": float(improved / max(self.completed, 1)),
        }

    def misclass_summary(self) -> dict[str, int]:
        return {
            "datasets_1_given_2": int(
                sum(o.points_1_given_2 > 0 for o in self.outcomes)
            ),
            "datasets_2_given_1": int(
                sum(o.points_2_given_1 > 0 for o in self.outcomes)
            ),
            "points_1_given_2": int(sum(o.points_1_given_2 for o in self.outcomes)),
            "points_2_given_1": int(sum(o.points_2_given_1 for o in self.outcomes)),
        }

    def to_json_dict(self) -> dict:
        return {
            "design": self.design,
            "approach": self.approach,
            "seed": self.seed,
            "n_replicates": self.n_replicates,
            "completed": self.completed,
            "failures": [[i, msg] for i, msg in self.failures],
            "parameters": self.param_summary(),
            "sigma2": self.sigma2_summary(),
            "emse": self.emse_summary(),
            "misclassification": self.misclass_summary(),
            "replicates": [
                {
                    "index": o.index,
                    "params": dict(sorted(o.params.items())),
                    "se": dict(sorted(o.se.items())),
                    "cover90": dict(sorted(o.cover90.items())),
                    "cover95": dict(sorted(o.cover95.items())),
                    "sigma2": o.sigma2,
                    "emse_initial": list(o.emse_initial),
                    "emse_final": list(o.emse_final),
                    "points_1_given_2": o.points_1_given_2,
                    "points_2_given_1": o.points_2_given_1,
                    "converged": o.converged,
                    "flags": list(o.flags),
                }
                for o in self.outcomes
            ],
        }


def _worker_count(max_workers: int | None) -> int:
    if max_workers is not None:
        return max(1, max_workers)
    raw = os.environ.get("SWITCHREG_THREADS", "").strip()
    if raw.isdigit() and int(raw) > 0:
        return int(raw)
    return 1


def run_study(
    design: int,
    approach: str,
    n_replicates: int,
    seed: int = 0,
    max_workers: int | None = None,
) -> SimStudyReport:
    """Draw the truth, run every replicate, and collect the report.

    Stream 0 of the spawned seed draws the truth; stream r + 1 drives
    replicate r. Results are merged into slots by replicate index, so
    the report does not depend on worker scheduling.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be at least 1")
    study_config(design, approach)
    streams = np.random.SeedSequence(seed).spawn(n_replicates + 1)
    truth = sample_truth(np.random.default_rng(streams[0]))
    x = GRID.copy()

    tasks = [
        (x, truth, design, approach, streams[r + 1], r)
        for r in range(n_replicates)
    ]
    slots: list[object] = [None] * n_replicates
    workers = _worker_count(max_workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_replicate_task, tasks, chunksize=1):
                slots[res.index if isinstance(res, ReplicateOutcome) else res[0]] = res
    else:
        for t in tasks:
            res = _replicate_task(t)
            slots[res.index if isinstance(res, ReplicateOutcome) else res[0]] = res

    outcomes = [s for s in slots if isinstance(s, ReplicateOutcome)]
    failures = [s for s in slots if not isinstance(s, ReplicateOutcome)]
    return SimStudyReport(
        design=design,
        approach=approach,
        seed=seed,
        n_replicates=n_replicates,
        x=x,
        truth=truth,
        outcomes=outcomes,
        failures=[(i, m) for i, m in failures],
    )
