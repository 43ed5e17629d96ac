"""EM orchestration: the penalized criterion, the fitting loop, automatic
initialization, cross-validated smoothing-parameter selection, and the
information-criterion sweep over the number of regimes.

One fit alternates the E-step of ``inference`` with the conditional
maximizations of ``mstep`` until the criterion stabilizes, then polishes
the latent parameters alone so the returned estimates sit at an exact
fixed point of the latent update. The polish matters: the observed-
information standard errors are only valid there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .basis import add_nugget, build_basis, design_matrix, kernel_gram, penalty_matrix
from .errors import (
    DegenerateRegime,
    EmptyGroup,
    GcvAllInfinite,
    SingularSystem,
    SwitchregError,
)
from .inference import estep_iid, estep_markov
from .model import (
    IIDStates,
    KernelFunctions,
    MarkovStates,
    ObservedSeries,
    Responsibilities,
    SplineFunctions,
    Theta,
    NoiseModel,
    validate_theta,
)
from .mstep import (
    VARIANCE_FLOOR_SCALE,
    fit_bayes,
    fit_penalized,
    update_latent_iid,
    update_latent_markov,
    update_sigma,
)

LOG_2PI = float(np.log(2.0 * np.pi))

HAT_DIAG_LIMIT = 1.0 - 1e-12
DEGENERATE_MASS = 2.0
POLISH_TOL = 1e-11
POLISH_MAX_ITER = 300
INIT_S_THRESHOLD = 10.0
INIT_S_REPLACEMENT = 15.0


@dataclass(frozen=True)
class FitConfig:
    """Run controls for one fit.

    ``approach`` selects the curvature-penalized spline formulation or
    the kernel (Gaussian-process) formulation; ``latent`` selects
    independent or Markov states. The cross-validation grid has
    ``grid_size`` log-spaced points spanning ``penalized_span`` times a
    data-driven balance scale for splines, or ``bayes_s_bounds``
    (default 0.5 to the x range) for kernel length scales.
    """

    approach: str = "penalized"
    latent: str = "iid"
    j: int = 2
    max_iter: int = 200
    tol: float = 1e-6
    grid_size: int = 25
    penalized_span: tuple[float, float] = (1e-4, 1e4)
    bayes_s_bounds: tuple[float, float] | None = None
    init: str = "function-estimate"
    subintervals: tuple[tuple[float, float], ...] | None = None
    df_adjust: bool = True
    shared_variance: bool = False
    n_interior: int = 30
    u_rule: str = "tied"
    u_fixed: float | None = None
    init_sigma2: float = 0.005
    gcv_rounds: int = 10
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.approach not in ("penalized", "bayes"):
            raise ValueError("approach must be 'penalized' or 'bayes'")
        if self.latent not in ("iid", "markov"):
            raise ValueError("latent must be 'iid' or 'markov'")
        if self.j < 1:
            raise ValueError("j must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.grid_size < 1:
            raise ValueError("grid must be nonempty")
        if self.u_rule not in ("tied", "fixed"):
            raise ValueError("u_rule must be 'tied' or 'fixed'")
        if self.u_rule == "fixed" and self.u_fixed is None:
            raise ValueError("u_rule 'fixed' requires u_fixed")

    def kernel_u(self, s: float) -> float:
        """Signal variance implied by length scale ``s`` under the
        configured rule."""
        if self.u_rule == "tied":
            return 1.0 / (s * np.sqrt(2.0 * np.pi))
        return float(self.u_fixed)


@dataclass
class FitResult:
    """Converged parameters with the diagnostics needed downstream."""

    theta: Theta
    resp: Responsibilities
    trace: np.ndarray
    loglik: float
    fitted: np.ndarray
    hat_trace: np.ndarray
    dh_trace: np.ndarray
    converged: bool
    n_iter: int
    flags: tuple[str, ...] = ()
    stderr: object | None = None

    @property
    def lambdas(self) -> np.ndarray:
        return self.theta.funcs.lambdas

    @property
    def criterion_final(self) -> float:
        return float(self.trace[-1])


def criterion(series: ObservedSeries, theta: Theta) -> float:
    """The maximized objective: incomplete-data log-likelihood plus the
    approach-specific roughness penalty."""
    if isinstance(theta.latent, IIDStates):
        _, loglik = estep_iid(series, theta)
    else:
        _, fb = estep_markov(series, theta)
        loglik = fb.loglik
    return loglik + _penalty_value(series, theta)


def _penalty_value(series: ObservedSeries, theta: Theta) -> float:
    funcs = theta.funcs
    if isinstance(funcs, SplineFunctions):
        r_mat = penalty_matrix(funcs.basis)
        quad = np.einsum("jk,kl,jl->j", funcs.coef, r_mat, funcs.coef)
        return float(-np.sum(funcs.lambdas * quad))
    total = -0.5 * funcs.j * LOG_2PI
    for jj in range(funcs.j):
        an = add_nugget(kernel_gram(series.x, funcs.u[jj], funcs.s[jj]))
        cf = cho_factor(an, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
        f = funcs.values[jj]
        total -= 0.5 * (logdet + float(f @ cho_solve(cf, f)))
    return total


class _PenalizedWork:
    """Cached design and penalty matrices for one penalized run."""

    def __init__(self, series: ObservedSeries, funcs: SplineFunctions):
        self.basis = funcs.basis
        self.b_mat = design_matrix(self.basis, series.x)
        self.r_mat = penalty_matrix(self.basis)

    def penalty(self, funcs: SplineFunctions) -> float:
        quad = np.einsum("jk,kl,jl->j", funcs.coef, self.r_mat, funcs.coef)
        return float(-np.sum(funcs.lambdas * quad))

    def solve(self, y, w, lam, sig2):
        try:
            return fit_penalized(y, self.b_mat, self.r_mat, w, lam)
        except SingularSystem:
            floor = 1e-12 * max(float(np.max(w)), 1.0 / sig2)
            return fit_penalized(y, self.b_mat, self.r_mat, np.maximum(w, floor), lam)


class _BayesWork:
    """Cached Gram matrices and factors for one kernel run at fixed
    smoothing parameters."""

    def __init__(self, series: ObservedSeries, funcs: KernelFunctions):
        self.grams = []
        self.factors = []
        self.logdets = []
        for jj in range(funcs.j):
            gram = kernel_gram(series.x, funcs.u[jj], funcs.s[jj])
            self.grams.append(gram)
            cf = cho_factor(add_nugget(gram), lower=True)
            self.factors.append(cf)
            self.logdets.append(2.0 * float(np.sum(np.log(np.diag(cf[0])))))

    def penalty(self, funcs: KernelFunctions) -> float:
        total = -0.5 * funcs.j * LOG_2PI
        for jj in range(funcs.j):
            f = funcs.values[jj]
            total -= 0.5 * (
                self.logdets[jj] + float(f @ cho_solve(self.factors[jj], f))
            )
        return total

    def solve(self, y, w, jj):
        return fit_bayes(y, self.grams[jj], w)


def em_fit(series: ObservedSeries, config: FitConfig, theta0: Theta) -> FitResult:
    """Alternate E- and conditional M-steps at fixed smoothing parameters
    until the relative criterion change drops below the tolerance.

    The returned responsibilities are synchronized with the returned
    theta, whose latent parameters are additionally polished to a fixed
    point of the latent update. Degenerate regimes (responsibility mass
    below 2.0) are flagged and the run continues with floored updates.
    """
    validate_theta(theta0)
    _check_shapes(config, theta0)
    y = series.y
    n = series.n
    j = theta0.j
    work = (
        _PenalizedWork(series, theta0.funcs)
        if config.approach == "penalized"
        else _BayesWork(series, theta0.funcs)
    )
    estep = estep_iid if config.latent == "iid" else _estep_markov_pair

    theta = theta0
    trace: list[float] = []
    flags: set[str] = set()
    hat_trace = np.zeros(j)
    dh_trace = np.zeros(j)
    converged = False
    n_iter = 0

    resp, loglik = estep(series, theta)
    for it in range(config.max_iter):
        n_iter = it + 1
        trace.append(loglik + work.penalty(theta.funcs))
        if len(trace) >= 2:
            prev, cur = trace[-2], trace[-1]
            if cur + 1e-8 < prev:
                flags.add("non_monotone")
            if abs(cur - prev) <= config.tol * max(1.0, abs(prev)):
                converged = True
                break

        mass = resp.p.sum(axis=0)
        if np.any(mass < DEGENERATE_MASS) and "degenerate_regime" not in flags:
            flags.add("degenerate_regime")
            warnings.warn(
                f"regime mass fell below {DEGENERATE_MASS}; continuing with floors",
                DegenerateRegime,
                stacklevel=2,
            )

        sig2 = theta.noise.variances
        fitted = np.empty((n, j))
        if config.approach == "penalized":
            coef = np.empty_like(theta.funcs.coef)
            lambdas = theta.funcs.lambdas
            for jj in range(j):
                w = resp.p[:, jj] / sig2[jj]
                coef[jj], h = work.solve(y, w, lambdas[jj], sig2[jj])
                fitted[:, jj] = work.b_mat @ coef[jj]
                hd = np.diag(h)
                hat_trace[jj] = float(np.sum(hd))
                dh_trace[jj] = float(resp.p[:, jj] @ hd)
            funcs = SplineFunctions(basis=work.basis, coef=coef, lambdas=lambdas)
        else:
            values = np.empty((j, n))
            for jj in range(j):
                w = resp.p[:, jj] / sig2[jj]
                values[jj], h = work.solve(y, w, jj)
                fitted[:, jj] = values[jj]
                hd = np.diag(h)
                hat_trace[jj] = float(np.sum(hd))
                dh_trace[jj] = float(resp.p[:, jj] @ hd)
            funcs = KernelFunctions(values=values, u=theta.funcs.u, s=theta.funcs.s)

        noise = update_sigma(
            y,
            fitted,
            resp,
            df_adjust=config.df_adjust,
            shared=config.shared_variance,
            traces=dh_trace,
            on_degenerate="clamp",
        )
        if config.latent == "iid":
            latent: IIDStates | MarkovStates = IIDStates(p=update_latent_iid(resp))
        else:
            latent = update_latent_markov(resp)
        theta = Theta(latent=latent, funcs=funcs, noise=noise)
        resp, loglik = estep(series, theta)
    else:
        trace.append(loglik + work.penalty(theta.funcs))

    if not converged:
        flags.add("not_converged")

    theta, resp, loglik, polished = _polish_latent(series, config, theta, estep)
    if not polished:
        flags.add("latent_polish_incomplete")
    trace.append(loglik + work.penalty(theta.funcs))

    return FitResult(
        theta=theta,
        resp=resp,
        trace=np.asarray(trace),
        loglik=loglik,
        fitted=theta.funcs.means(series.x),
        hat_trace=hat_trace.copy(),
        dh_trace=dh_trace.copy(),
        converged=converged,
        n_iter=n_iter,
        flags=tuple(sorted(flags)),
    )


def _estep_markov_pair(series, theta):
    resp, fb = estep_markov(series, theta)
    return resp, fb.loglik


def _check_shapes(config: FitConfig, theta: Theta) -> None:
    if config.approach == "penalized" and not isinstance(theta.funcs, SplineFunctions):
        raise ValueError("penalized approach requires spline regime functions")
    if config.approach == "bayes" and not isinstance(theta.funcs, KernelFunctions):
        raise ValueError("bayes approach requires kernel regime functions")
    if config.latent == "iid" and not isinstance(theta.latent, IIDStates):
        raise ValueError("iid latent config requires IIDStates")
    if config.latent == "markov" and not isinstance(theta.latent, MarkovStates):
        raise ValueError("markov latent config requires MarkovStates")
    if theta.j != config.j:
        raise ValueError(f"theta has {theta.j} regimes, config expects {config.j}")


def _polish_latent(series, config, theta, estep):
    """Iterate the E-step and latent update alone until the latent
    parameters are stationary; each pass is itself a conditional
    maximization, so the criterion cannot decrease."""
    resp, loglik = estep(series, theta)
    for _ in range(POLISH_MAX_ITER):
        if config.latent == "iid":
            new_latent: IIDStates | MarkovStates = IIDStates(p=update_latent_iid(resp))
            gap = float(np.max(np.abs(new_latent.p - theta.latent.p)))
        else:
            new_latent = update_latent_markov(resp)
            gap = max(
                float(np.max(np.abs(new_latent.a - theta.latent.a))),
                float(np.max(np.abs(new_latent.pi - theta.latent.pi))),
            )
        theta = Theta(latent=new_latent, funcs=theta.funcs, noise=theta.noise)
        resp, loglik = estep(series, theta)
        if gap < POLISH_TOL:
            return theta, resp, loglik, True
    return theta, resp, loglik, False


# ---------------------------------------------------------------------------
# Smoothing-spline and kernel helpers shared by initialization and I/O.


@dataclass(frozen=True)
class SplineFit:
    """A single unweighted cross-validated smoothing-spline fit."""

    basis: object
    coef: np.ndarray
    fitted: np.ndarray
    lam: float
    hat_trace: float
    rss: float


def smooth_spline_gcv(
    x: np.ndarray,
    y: np.ndarray,
    n_interior: int = 30,
    grid_size: int = 25,
    span: tuple[float, float] = (1e-4, 1e4),
) -> SplineFit:
    """Fit one cubic smoothing spline with the curvature-penalty weight
    chosen by generalized cross-validation over a log-spaced grid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    basis = build_basis(x, n_interior)
    b_mat = design_matrix(basis, x)
    r_mat = penalty_matrix(basis)
    scale = np.trace(b_mat.T @ b_mat) / (2.0 * np.trace(r_mat))
    grid = scale * np.geomspace(span[0], span[1], grid_size)
    ones = np.ones(x.size)
    best = None
    for lam in grid:
        coef, h = fit_penalized(y, b_mat, r_mat, ones, lam)
        score = _gcv_score(y, b_mat @ coef, np.diag(h), ones)
        if np.isfinite(score) and (best is None or score < best[0]):
            best = (score, lam, coef, h)
    if best is None:
        raise GcvAllInfinite("no valid smoothing weight for the plain spline fit")
    _, lam, coef, h = best
    fitted = b_mat @ coef
    return SplineFit(
        basis=basis,
        coef=coef,
        fitted=fitted,
        lam=float(lam),
        hat_trace=float(np.trace(h)),
        rss=float(np.sum((y - fitted) ** 2)),
    )


def _gcv_score(y, fitted, hat_diag, weights) -> float:
    """Responsibility-weighted leave-one-out style score; infinite when
    any self-influence reaches one at a weighted point."""
    active = weights > 0
    if np.any(hat_diag[active] >= HAT_DIAG_LIMIT):
        return np.inf
    r = (y - fitted)[active] / (1.0 - hat_diag[active])
    return float(np.sum(weights[active] * r * r) / y.size)


# ---------------------------------------------------------------------------
# Initialization.


def init_function_estimate(series: ObservedSeries, config: FitConfig) -> Theta:
    """Initial parameters from a single overall smoothing-spline fit.

    With two regimes, points below the overall curve seed group 1 and the
    rest group 2, each group is fit separately, and the noise variance is
    the pooled df-adjusted residual variance. With one regime or more
    than two, the initial functions are constant shifts of the overall
    curve at residual quantiles (j - 1/2)/J, a rule that needs no
    grouping. Latent parameters start uniform.
    """
    overall = smooth_spline_gcv(series.x, series.y, config.n_interior)
    if config.j == 2:
        labels = np.where(series.y <= overall.fitted, 0, 1)
        return _theta_from_groups(series, config, labels, overall)
    return _theta_from_shifts(series, config, overall)


def init_residual_based(series: ObservedSeries, config: FitConfig) -> Theta:
    """Initial parameters from clustering residuals within subintervals.

    Residuals from the overall fit are split into two groups by exact
    two-means within each subinterval; the group with the smaller mean
    becomes group 1. Useful when the state process dwells long in one
    state and the overall curve tracks a single regime for stretches.
    """
    if config.j != 2:
        raise ValueError("residual-based initialization is defined for two regimes")
    overall = smooth_spline_gcv(series.x, series.y, config.n_interior)
    resid = series.y - overall.fitted
    bounds = config.subintervals or _default_subintervals(series.x)
    labels = np.zeros(series.n, dtype=int)
    assigned = np.zeros(series.n, dtype=bool)
    for lo, hi in bounds:
        inside = (series.x >= lo) & (series.x <= hi) & ~assigned
        idx = np.nonzero(inside)[0]
        if idx.size == 0:
            continue
        assigned[idx] = True
        if idx.size == 1:
            labels[idx] = 0 if resid[idx[0]] <= np.median(resid) else 1
            continue
        labels[idx] = _two_means_1d(resid[idx])
    if not np.all(assigned):
        left = np.nonzero(~assigned)[0]
        labels[left] = np.where(resid[left] <= np.median(resid), 0, 1)
    return _theta_from_groups(series, config, labels, overall)


def _default_subintervals(x: np.ndarray) -> tuple[tuple[float, float], ...]:
    lo, hi = float(np.min(x)), float(np.max(x))
    cuts = np.linspace(lo, hi, 4)
    return tuple((float(a), float(b)) for a, b in zip(cuts[:-1], cuts[1:]))


def _two_means_1d(values: np.ndarray) -> np.ndarray:
    """Exact two-means on a line: optimal clusters are contiguous in
    sorted order, so try every split and keep the smallest within-group
    sum of squares. The lower-mean cluster gets label 0."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    m = v.size
    csum = np.cumsum(v)
    csq = np.cumsum(v * v)
    best_k, best_sse = 1, np.inf
    for k in range(1, m):
        left = csq[k - 1] - csum[k - 1] ** 2 / k
        right = (csq[-1] - csq[k - 1]) - (csum[-1] - csum[k - 1]) ** 2 / (m - k)
        sse = left + right
        if sse < best_sse:
            best_sse, best_k = sse, k
    labels = np.empty(m, dtype=int)
    labels[order[:best_k]] = 0
    labels[order[best_k:]] = 1
    return labels


def _theta_from_groups(
    series: ObservedSeries, config: FitConfig, labels: np.ndarray, overall: SplineFit
) -> Theta:
    y = series.y
    rss_total = 0.0
    df_total = 0.0
    if config.approach == "penalized":
        b_full = design_matrix(overall.basis, series.x)
        r_mat = penalty_matrix(overall.basis)
        coef = np.empty((2, overall.coef.size))
        group_tr = np.empty(2)
        for g in (0, 1):
            mask = labels == g
            if mask.sum() < 4:
                raise EmptyGroup(f"initial group {g} holds {mask.sum()} points")
            cg, rss, df = _group_spline(y, b_full, r_mat, mask, config)
            coef[g] = cg
            group_tr[g] = mask.sum() - df
            rss_total += rss
            df_total += df
        sigma2 = rss_total / df_total
        w0 = np.full(series.n, 0.5 / sigma2)
        lam0 = np.array(
            [_lambda_matching_df(b_full, r_mat, w0, group_tr[g]) for g in (0, 1)]
        )
        funcs: SplineFunctions | KernelFunctions = SplineFunctions(
            basis=overall.basis, coef=coef, lambdas=lam0
        )
    else:
        values = np.empty((2, series.n))
        s_init = np.empty(2)
        u_init = np.empty(2)
        for g in (0, 1):
            mask = labels == g
            if mask.sum() < 4:
                raise EmptyGroup(f"initial group {g} holds {mask.sum()} points")
            vals, s_g, rss, df = _group_kernel(series, mask, config)
            values[g] = vals
            s_init[g] = s_g
            u_init[g] = config.kernel_u(s_g)
            rss_total += rss
            df_total += df
        sigma2 = rss_total / df_total
        funcs = KernelFunctions(values=values, u=u_init, s=s_init)
    noise = NoiseModel(
        variances=np.full(2, sigma2), shared=config.shared_variance
    )
    latent = _uniform_latent(config, 2)
    return Theta(latent=latent, funcs=funcs, noise=noise)


def _theta_from_shifts(
    series: ObservedSeries, config: FitConfig, overall: SplineFit
) -> Theta:
    j = config.j
    resid = series.y - overall.fitted
    shifts = np.quantile(resid, (np.arange(1, j + 1) - 0.5) / j)
    sigma2 = overall.rss / max(series.n - overall.hat_trace, 1.0)
    if config.approach == "penalized":
        b_full = design_matrix(overall.basis, series.x)
        r_mat = penalty_matrix(overall.basis)
        coef = overall.coef[None, :] + shifts[:, None]
        lam0 = _lambda_matching_df(
            b_full,
            r_mat,
            np.full(series.n, 1.0 / (j * sigma2)),
            overall.hat_trace,
        )
        funcs: SplineFunctions | KernelFunctions = SplineFunctions(
            basis=overall.basis, coef=coef, lambdas=np.full(j, lam0)
        )
    else:
        s_init = _overall_kernel_scale(series, config, sigma2)
        values = overall.fitted[None, :] + shifts[:, None]
        funcs = KernelFunctions(
            values=values,
            u=np.full(j, config.kernel_u(s_init)),
            s=np.full(j, s_init),
        )
    noise = NoiseModel(variances=np.full(j, sigma2), shared=config.shared_variance)
    return Theta(latent=_uniform_latent(config, j), funcs=funcs, noise=noise)


def _uniform_latent(config: FitConfig, j: int):
    if config.latent == "iid":
        return IIDStates(p=np.full(j, 1.0 / j))
    return MarkovStates(pi=np.full(j, 1.0 / j), a=np.full((j, j), 1.0 / j))


def _group_spline(y, b_full, r_mat, mask, config):
    """Cross-validated spline fit to one group over the full-domain
    basis, so the curve extends over the whole series."""
    b_g = b_full[mask]
    y_g = y[mask]
    scale = np.trace(b_g.T @ b_g) / (2.0 * np.trace(r_mat))
    grid = scale * np.geomspace(*config.penalized_span, config.grid_size)
    ones = np.ones(y_g.size)
    best = None
    for lam in grid:
        try:
            coef, h = fit_penalized(y_g, b_g, r_mat, ones, lam)
        except SingularSystem:
            continue
        score = _gcv_score(y_g, b_g @ coef, np.diag(h), ones)
        if np.isfinite(score) and (best is None or score < best[0]):
            best = (score, coef, h)
    if best is None:
        raise GcvAllInfinite("no valid smoothing weight for a group fit")
    _, coef, h = best
    rss = float(np.sum((y_g - b_g @ coef) ** 2))
    df = y_g.size - float(np.trace(h))
    return coef, rss, max(df, 1.0)


def _overall_kernel_scale(series, config, sig2) -> float:
    """Length scale for the shifted-copies start: cross-validated on a
    single fit to the whole series, then floored like any other initial
    fit. A start that is too wiggly misclassifies points right away and
    the alternating algorithm cannot recover."""
    lo, hi = _s_bounds(series, config)
    grid = np.geomspace(lo, hi, config.grid_size)
    w = np.full(series.n, 1.0 / sig2)
    ones = np.ones(series.n)
    best = None
    for s in grid:
        fitted, h = fit_bayes(
            series.y, kernel_gram(series.x, config.kernel_u(s), s), w
        )
        score = _gcv_score(series.y, fitted, np.diag(h), ones)
        if np.isfinite(score) and (best is None or score < best[0]):
            best = (score, s)
    if best is None:
        raise GcvAllInfinite("no valid length scale for the overall fit")
    s_init = best[1]
    if s_init < INIT_S_THRESHOLD:
        s_init = INIT_S_REPLACEMENT
    return float(s_init)


def _group_kernel(series, mask, config):
    """Posterior-mean fit to one group under the squared-exponential
    kernel, length scale by cross-validation with the documented floor
    applied afterward."""
    x_g = series.x[mask]
    y_g = series.y[mask]
    lo, hi = _s_bounds(series, config)
    grid = np.geomspace(lo, hi, config.grid_size)
    sig2 = config.init_sigma2
    best = None
    for s in grid:
        u = config.kernel_u(s)
        a_gg = add_nugget(kernel_gram(x_g, u, s))
        cf = cho_factor(a_gg + sig2 * np.eye(x_g.size), lower=True)
        h = a_gg @ cho_solve(cf, np.eye(x_g.size))
        score = _gcv_score(y_g, h @ y_g, np.diag(h), np.ones(x_g.size))
        if np.isfinite(score) and (best is None or score < best[0]):
            best = (score, s)
    if best is None:
        raise GcvAllInfinite("no valid length scale for a group fit")
    s_g = best[1]
    if s_g < INIT_S_THRESHOLD:
        s_g = INIT_S_REPLACEMENT
    u = config.kernel_u(s_g)
    a_gg = add_nugget(kernel_gram(x_g, u, s_g))
    cf = cho_factor(a_gg + sig2 * np.eye(x_g.size), lower=True)
    weights = cho_solve(cf, y_g)
    cross = u * np.exp(-0.5 * ((series.x[:, None] - x_g[None, :]) / s_g) ** 2)
    vals = cross @ weights
    h = a_gg @ cho_solve(cf, np.eye(x_g.size))
    rss = float(np.sum((y_g - h @ y_g) ** 2))
    df = y_g.size - float(np.trace(h))
    return vals, float(s_g), rss, max(df, 1.0)


def _balance_lambda(b_mat, r_mat, w) -> float:
    """Penalty weight equalizing the traces of the data and curvature
    blocks of the normal equations; a scale-free anchor for grids."""
    rowsq = np.sum(b_mat * b_mat, axis=1)
    return float((w @ rowsq) / (2.0 * np.trace(r_mat)))


def _effective_df(b_mat, r_mat, w, lam) -> float:
    bw = b_mat * w[:, None]
    gram = b_mat.T @ bw
    try:
        cf = cho_factor(gram + 2.0 * lam * r_mat, lower=True)
    except LinAlgError:
        return float(b_mat.shape[1])
    return float(np.trace(cho_solve(cf, gram)))


def _lambda_matching_df(b_mat, r_mat, w, target_df) -> float:
    """Penalty weight whose fit has the requested effective degrees of
    freedom under the given weights; keeps the first pass of the
    alternating algorithm at the initializer's smoothness instead of
    letting an arbitrary starting weight overfit immediately.

    trace(H) is monotone decreasing in the penalty weight, so bisection
    on the log scale converges safely."""
    k = b_mat.shape[1]
    target = min(max(float(target_df), 2.5), k - 0.5)
    center = _balance_lambda(b_mat, r_mat, w)
    lo, hi = np.log(center * 1e-8), np.log(center * 1e8)
    if _effective_df(b_mat, r_mat, w, np.exp(lo)) < target:
        return float(np.exp(lo))
    if _effective_df(b_mat, r_mat, w, np.exp(hi)) > target:
        return float(np.exp(hi))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _effective_df(b_mat, r_mat, w, np.exp(mid)) > target:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))


def _s_bounds(series: ObservedSeries, config: FitConfig) -> tuple[float, float]:
    if config.bayes_s_bounds is not None:
        return config.bayes_s_bounds
    return 0.5, float(np.ptp(series.x))


# ---------------------------------------------------------------------------
# Smoothing-parameter selection.


def select_lambda_gcv(
    series: ObservedSeries, config: FitConfig, theta0: Theta
) -> FitResult:
    """Alternate full fits with per-regime grid searches until the grid
    choices stop moving, then return the fit at the settled values.

    The grid is built once, after the first inner fit, from the weights
    at that fit; freezing it makes the stability test well defined. If
    every grid point is invalid for some regime the bounds are widened
    once before giving up.
    """
    theta = theta0
    prev_idx: tuple[int, ...] | None = None
    grid: np.ndarray | None = None
    widened = False
    res = None
    for _ in range(config.gcv_rounds):
        res = em_fit(series, config, theta)
        if grid is None:
            grid = _make_grid(series, config, res)
        while True:
            try:
                idx = _select_indices(series, config, res, grid)
                break
            except GcvAllInfinite:
                if widened:
                    raise
                widened = True
                grid = _widen_grid(config, grid)
                prev_idx = None
        if idx == prev_idx:
            return res
        prev_idx = idx
        theta = _with_lambdas(config, res.theta, grid[list(idx)])
    final = em_fit(series, config, theta)
    final.flags = tuple(sorted(set(final.flags) | {"gcv_not_settled"}))
    return final


def _make_grid(series, config, res) -> np.ndarray:
    if config.approach == "bayes":
        lo, hi = _s_bounds(series, config)
        return np.geomspace(lo, hi, config.grid_size)
    work = _PenalizedWork(series, res.theta.funcs)
    sig2 = res.theta.noise.variances
    scales = [
        _balance_lambda(work.b_mat, work.r_mat, res.resp.p[:, jj] / sig2[jj])
        for jj in range(config.j)
    ]
    scale = float(np.mean(scales))
    return scale * np.geomspace(*config.penalized_span, config.grid_size)


def _widen_grid(config, grid) -> np.ndarray:
    lo, hi = float(grid[0]), float(grid[-1])
    return np.geomspace(lo / 100.0, hi * 100.0, config.grid_size + 8)


def _select_indices(series, config, res, grid) -> tuple[int, ...]:
    y = series.y
    p_hat = res.resp.p
    sig2 = res.theta.noise.variances
    idx = []
    if config.approach == "penalized":
        work = _PenalizedWork(series, res.theta.funcs)
        for jj in range(config.j):
            w = p_hat[:, jj] / sig2[jj]
            scores = np.empty(grid.size)
            for g, lam in enumerate(grid):
                try:
                    coef, h = fit_penalized(y, work.b_mat, work.r_mat, w, lam)
                except SingularSystem:
                    scores[g] = np.inf
                    continue
                scores[g] = _gcv_score(y, work.b_mat @ coef, np.diag(h), p_hat[:, jj])
            if not np.any(np.isfinite(scores)):
                raise GcvAllInfinite(f"no valid smoothing weight for regime {jj}")
            idx.append(int(np.argmin(scores)))
    else:
        for jj in range(config.j):
            w = p_hat[:, jj] / sig2[jj]
            scores = np.empty(grid.size)
            for g, s in enumerate(grid):
                gram = kernel_gram(series.x, config.kernel_u(s), s)
                fitted, h = fit_bayes(y, gram, w)
                scores[g] = _gcv_score(y, fitted, np.diag(h), p_hat[:, jj])
            if not np.any(np.isfinite(scores)):
                raise GcvAllInfinite(f"no valid length scale for regime {jj}")
            idx.append(int(np.argmin(scores)))
    return tuple(idx)


def _with_lambdas(config, theta, values) -> Theta:
    if config.approach == "penalized":
        funcs: SplineFunctions | KernelFunctions = SplineFunctions(
            basis=theta.funcs.basis, coef=theta.funcs.coef, lambdas=values
        )
    else:
        funcs = KernelFunctions(
            values=theta.funcs.values,
            u=np.array([config.kernel_u(s) for s in values]),
            s=values,
        )
    return Theta(latent=theta.latent, funcs=funcs, noise=theta.noise)


# ---------------------------------------------------------------------------
# Choice of the number of regimes.


@dataclass
class JSelection:
    """Information-criterion sweep over regime counts."""

    aic: dict[int, float]
    results: dict[int, FitResult]
    failures: dict[int, str]
    best: int | None


def aic_value(result: FitResult, config: FitConfig) -> float:
    """Twice the negative log-likelihood plus twice the effective
    parameter count: hat-matrix traces, estimated variances, and free
    mixing proportions."""
    n_var = 1 if config.shared_variance else config.j
    dof = float(np.sum(result.hat_trace)) + n_var + config.j - 1
    return -2.0 * result.loglik + 2.0 * dof


def _degenerate_reason(series: ObservedSeries, result: FitResult) -> str | None:
    """A converged fit whose variance sits at the numerical floor, whose
    regime occupancy has emptied out, or whose variance denominator has
    almost no residual degrees of freedom left is a boundary artifact of
    the unbounded mixture likelihood: its likelihood value depends on
    floor constants rather than on the data, so it cannot be compared
    across regime counts."""
    floor = VARIANCE_FLOOR_SCALE * float(np.var(series.y))
    if floor <= 0.0:
        floor = VARIANCE_FLOOR_SCALE
    if np.any(result.theta.noise.variances <= floor * (1.0 + 1e-9)):
        return "variance estimate pinned at the numerical floor"
    mass = result.resp.p.sum(axis=0)
    if np.any(mass < DEGENERATE_MASS):
        return f"regime occupancy below {DEGENERATE_MASS} points"
    if np.any(mass - result.dh_trace < DEGENERATE_MASS):
        return (
            f"fewer than {DEGENERATE_MASS} residual degrees of freedom"
            " behind a variance estimate"
        )
    return None


def select_j_aic(
    series: ObservedSeries, config: FitConfig, j_range
) -> JSelection:
    """Fit each candidate regime count with cross-validated smoothing and
    rank by the information criterion. A failed candidate is recorded and
    skipped, not fatal; a fit that converged onto a degenerate boundary
    is likewise excluded from the ranking, because its likelihood is an
    artifact of the variance floor rather than a comparable score."""
    j_range = list(j_range)
    if any(j < 1 or j > 8 for j in j_range):
        raise ValueError("regime counts must lie in 1..8")
    aic: dict[int, float] = {}
    results: dict[int, FitResult] = {}
    failures: dict[int, str] = {}
    for j in j_range:
        cfg = replace(config, j=j)
        try:
            theta0 = make_initial(series, cfg)
            res = select_lambda_gcv(series, cfg, theta0)
        except SwitchregError as exc:
            failures[j] = f"{type(exc).__name__}: {exc}"
            continue
        results[j] = res
        reason = _degenerate_reason(series, res)
        if reason is None:
            aic[j] = aic_value(res, cfg)
        else:
            failures[j] = f"degenerate optimum: {reason}"
    best = min(aic, key=aic.get) if aic else None
    return JSelection(aic=aic, results=results, failures=failures, best=best)


def make_initial(series: ObservedSeries, config: FitConfig) -> Theta:
    """Dispatch to the configured initialization method."""
    if config.init == "function-estimate":
        return init_function_estimate(series, config)
    if config.init == "residual-based":
        return init_residual_based(series, config)
    raise ValueError(f"unknown initialization method {config.init!r}")


def attach_stderr(series: ObservedSeries, res: FitResult) -> FitResult:
    """Attach latent-parameter standard errors to a finished fit; a
    refusal is recorded as a flag, never an error."""
    from . import stderrs

    try:
        res.stderr = stderrs.from_fit(series, res)
        if res.stderr is None:
            res.flags = tuple(
                sorted(set(res.flags) | {"stderr_unavailable:unsupported"})
            )
    except SwitchregError as exc:
        res.stderr = None
        res.flags = tuple(
            sorted(set(res.flags) | {f"stderr_unavailable:{type(exc).__name__}"})
        )
    return res


def fit_series(series: ObservedSeries, config: FitConfig) -> FitResult:
    """Initialize, select smoothing parameters, and fit; the standard
    errors of the latent parameters are attached when available."""
    theta0 = make_initial(series, config)
    res = select_lambda_gcv(series, config, theta0)
    return attach_stderr(series, res)
