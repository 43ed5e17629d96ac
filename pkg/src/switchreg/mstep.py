"""Conditional maximizations of the M-step: one penalized or
kernel-based weighted regression per regime, the variance updates with
degrees-of-freedom adjustment, and the closed-form latent-parameter
updates.

The kernel solve uses the square-root form
A W^{1/2} (W^{1/2} A W^{1/2} + I)^{-1} W^{1/2} y, which stays defined
when responsibilities (hence weights) are exactly zero; the textbook
form inverts W and does not.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .basis import add_nugget
from .errors import (
    DegenerateDenominator,
    EmptyRow,
    NonPositiveVariance,
    SingularSystem,
)
from .model import MarkovStates, NoiseModel, Responsibilities

VARIANCE_FLOOR_SCALE = 1e-12
DENOMINATOR_FLOOR = 1.0


def fit_penalized(
    y: np.ndarray,
    b_mat: np.ndarray,
    r_mat: np.ndarray,
    w: np.ndarray,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the weighted curvature-penalized normal equations.

    Returns the coefficient vector (BᵀWB + 2 lam R)⁻¹ BᵀW y and the hat
    matrix B (BᵀWB + 2 lam R)⁻¹ BᵀW. Raises SingularSystem when the
    system is rank deficient, which happens when the weight mass spans
    fewer than two effective points and the penalty null space is left
    unidentified.
    """
    bw = b_mat * w[:, None]
    m = b_mat.T @ bw + (2.0 * lam) * r_mat
    try:
        cf = cho_factor(m, lower=True)
    except (LinAlgError, ValueError) as exc:
        raise SingularSystem(
            "penalized system is rank deficient; floor the weights and retry"
        ) from exc
    phi = cho_solve(cf, bw.T @ y)
    h = b_mat @ cho_solve(cf, bw.T)
    return phi, h


def fit_bayes(
    y: np.ndarray, a_gram: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted kernel-regression solve in square-root form.

    Returns fitted values and hat matrix; zero weights contribute zero,
    matching the limit of the textbook A (A + W⁻¹)⁻¹ form. The nugget is
    applied to the Gram diagonal here, at factorization time.
    """
    an = add_nugget(a_gram)
    sw = np.sqrt(w)
    n = y.size
    m = sw[:, None] * an * sw[None, :] + np.eye(n)
    cf = cho_factor(m, lower=True)
    h = (an * sw[None, :]) @ cho_solve(cf, np.diag(sw))
    return h @ y, h


def update_sigma(
    y: np.ndarray,
    means: np.ndarray,
    resp: Responsibilities,
    df_adjust: bool = True,
    shared: bool = False,
    traces: np.ndarray | None = None,
    on_degenerate: str = "raise",
) -> NoiseModel:
    """Responsibility-weighted variance update.

    ``means`` is the (n, J) matrix of fitted regime values. With
    ``df_adjust`` the per-regime denominator sum_i p_ij is reduced by
    trace(D_j H_j) to account for the degrees of freedom spent on the
    function estimate; the shared variant pools numerators over regimes
    with denominator n - sum_j trace(D_j H_j).

    A denominator at or below 1.0 raises DegenerateDenominator, or is
    clamped to 1.0 when ``on_degenerate="clamp"``. Non-positive variances
    are floored at 1e-12 var(y) with a NonPositiveVariance warning.
    """
    if df_adjust and traces is None:
        raise ValueError("df_adjust requires the traces of D_j H_j")
    if on_degenerate not in ("raise", "clamp"):
        raise ValueError("on_degenerate must be 'raise' or 'clamp'")
    p = resp.p
    n, j = p.shape
    resid2 = (y[:, None] - means) ** 2
    num = np.sum(p * resid2, axis=0)
    mass = np.sum(p, axis=0)
    if df_adjust:
        den = mass - np.asarray(traces, dtype=float)
    else:
        den = mass.copy()
    if shared:
        num = np.full(j, float(np.sum(num)))
        den = np.full(j, float(n - np.sum(traces)) if df_adjust else float(n))
    low = den <= DENOMINATOR_FLOOR
    if np.any(low):
        if on_degenerate == "raise":
            raise DegenerateDenominator(
                f"variance denominator(s) {den[low]} at or below {DENOMINATOR_FLOOR}"
            )
        den = np.maximum(den, DENOMINATOR_FLOOR)
    variances = num / den
    floor = VARIANCE_FLOOR_SCALE * float(np.var(y))
    if floor <= 0.0:
        floor = VARIANCE_FLOOR_SCALE
    bad = variances <= floor
    if np.any(bad):
        warnings.warn(
            f"variance update underflowed for regime(s) {np.nonzero(bad)[0]}; floored",
            NonPositiveVariance,
            stacklevel=2,
        )
        variances = np.maximum(variances, floor)
    return NoiseModel(variances=variances, shared=shared)


def update_latent_iid(resp: Responsibilities) -> np.ndarray:
    """Column means of the responsibilities."""
    return resp.p.mean(axis=0)


def update_latent_markov(resp: Responsibilities) -> MarkovStates:
    """Transition estimates from pairwise posteriors and initial
    probabilities from the first row.

    A row with no posterior mass is set uniform and flagged with an
    EmptyRow warning.
    """
    if resp.pair is None:
        raise ValueError("Markov update requires pairwise posteriors")
    j = resp.j
    num = resp.pair.sum(axis=0)
    a = np.empty((j, j))
    for row in range(j):
        total = num[row].sum()
        if total <= 0.0:
            warnings.warn(
                f"no posterior mass leaves state {row}; row set uniform",
                EmptyRow,
                stacklevel=2,
            )
            a[row] = 1.0 / j
        else:
            a[row] = num[row] / total
    return MarkovStates(pi=resp.p[0] / resp.p[0].sum(), a=a)
