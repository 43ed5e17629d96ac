"""Observed-information standard errors for the latent-state parameters.

The information matrix is assembled from conditional moments of the
complete-data score (the missing-information decomposition), which the
E-step quantities supply directly. The formulas assume the latent
parameters sit exactly at a fixed point of their update, so both entry
points verify stationarity first and refuse to proceed otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import (
    BoundaryEstimate,
    ComplexityGuard,
    NotAtFixedPoint,
    PositiveDefiniteViolation,
)
from .inference import estep_markov, step_matrices
from .model import IIDStates, MarkovStates, ObservedSeries, Responsibilities, Theta
from .mstep import update_latent_iid, update_latent_markov

BOUNDARY_MARGIN = 1e-6
FIXED_POINT_TOL = 1e-6
MARKOV_LENGTH_LIMIT = 2000


@dataclass(frozen=True)
class InformationMatrix:
    """Information matrix for the free latent parameters, its inverse,
    and the resulting standard errors. ``se_last`` carries the implied
    standard error of the redundant mixing proportion when the free
    parameters are the first J - 1 proportions."""

    matrix: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    labels: tuple[str, ...]
    se_last: float | None = None

    def to_dict(self) -> dict:
        out = {
            "labels": list(self.labels),
            "matrix": self.matrix.tolist(),
            "covariance": self.covariance.tolist(),
            "se": self.se.tolist(),
        }
        if self.se_last is not None:
            out["se_last"] = self.se_last
        return out


def _invert_info(info: np.ndarray, what: str) -> np.ndarray:
    try:
        cf = cho_factor(info, lower=True)
    except (LinAlgError, ValueError) as exc:
        raise PositiveDefiniteViolation(
            f"{what} information matrix is not positive definite"
        ) from exc
    return cho_solve(cf, np.eye(info.shape[0]))


def info_iid(resp: Responsibilities, p_hat: np.ndarray) -> InformationMatrix:
    """Information for the mixing proportions of independent states.

    At the fixed point the score of observation i with respect to p_j is
    p_ij / p_j - p_iJ / p_J, and the observed information is the Gram
    matrix of these scores; the cross-product form is exact there, no
    separate curvature term is needed.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    j = p_hat.size
    if np.any(p_hat < BOUNDARY_MARGIN) or np.any(p_hat > 1.0 - BOUNDARY_MARGIN):
        raise BoundaryEstimate(
            f"mixing proportion within {BOUNDARY_MARGIN} of the boundary"
        )
    gap = float(np.max(np.abs(resp.p.mean(axis=0) - p_hat)))
    if gap > FIXED_POINT_TOL:
        raise NotAtFixedPoint(
            f"proportions differ from their update by {gap:.2e}"
        )
    scores = resp.p[:, : j - 1] / p_hat[: j - 1] - (resp.p[:, -1] / p_hat[-1])[:, None]
    info = scores.T @ scores
    cov = _invert_info(info, "proportion")
    se = np.sqrt(np.diag(cov))
    se_last = float(np.sqrt(np.sum(cov)))
    labels = tuple(f"p_{k + 1}" for k in range(j - 1))
    return InformationMatrix(
        matrix=info, covariance=cov, se=se, labels=labels, se_last=se_last
    )


def info_markov2(
    series: ObservedSeries, theta: Theta, resp=None, fb=None
) -> InformationMatrix:
    """Information for the two free transition probabilities of a
    two-state chain.

    The conditional expectation of the squared score needs joint
    posteriors of state pairs at arbitrary step separations; a backward
    accumulation over the scaled step matrices collects all of them in
    one linear pass, so the cost is linear in the series length. The
    guard on length is conservative and protects the quadratic number
    of implicit pair terms from silent blowup on huge inputs.
    """
    if not isinstance(theta.latent, MarkovStates) or theta.j != 2:
        raise ValueError("transition standard errors cover two-state chains only")
    if series.n > MARKOV_LENGTH_LIMIT:
        raise ComplexityGuard(
            f"series length {series.n} exceeds the limit {MARKOV_LENGTH_LIMIT}"
        )
    if resp is None or fb is None:
        resp, fb = estep_markov(series, theta)
    a12 = float(theta.latent.a[0, 1])
    a21 = float(theta.latent.a[1, 0])
    for val in (a12, a21):
        if val < BOUNDARY_MARGIN or val > 1.0 - BOUNDARY_MARGIN:
            raise BoundaryEstimate(
                f"transition probability within {BOUNDARY_MARGIN} of the boundary"
            )
    upd = update_latent_markov(resp)
    gap = max(
        float(np.max(np.abs(upd.a - theta.latent.a))),
        float(np.max(np.abs(upd.pi - theta.latent.pi))),
    )
    if gap > FIXED_POINT_TOL:
        raise NotAtFixedPoint(
            f"transition parameters differ from their update by {gap:.2e}"
        )

    mass = resp.p[:-1].sum(axis=0)
    term1 = np.diag(
        [mass[0] / (a12 * (1.0 - a12)), mass[1] / (a21 * (1.0 - a21))]
    )

    ua = np.array([[-1.0 / (1.0 - a12), 1.0 / a12], [0.0, 0.0]])
    va = np.array([[0.0, 0.0], [1.0 / a21, -1.0 / (1.0 - a21)]])
    pair = resp.pair
    sum_u2 = float(np.sum(pair * ua * ua))
    sum_v2 = float(np.sum(pair * va * va))
    sum_uv = float(np.sum(pair * ua * va))

    st = step_matrices(fb, theta.latent.a)
    fwd_u = np.einsum("il,ilj->ij", fb.delta[:-1], st * ua[None])
    fwd_v = np.einsum("il,ilj->ij", fb.delta[:-1], st * va[None])
    bwd_u = np.einsum("itw,iw->it", st * ua[None], fb.beta[1:])
    bwd_v = np.einsum("itw,iw->it", st * va[None], fb.beta[1:])

    m = st.shape[0]
    tail_u = np.zeros(2)
    tail_v = np.zeros(2)
    cross_uu = cross_vv = cross_uv = cross_vu = 0.0
    for i in range(m - 2, -1, -1):
        tail_u = bwd_u[i + 1] + st[i + 1] @ tail_u
        tail_v = bwd_v[i + 1] + st[i + 1] @ tail_v
        cross_uu += float(fwd_u[i] @ tail_u)
        cross_vv += float(fwd_v[i] @ tail_v)
        cross_uv += float(fwd_u[i] @ tail_v)
        cross_vu += float(fwd_v[i] @ tail_u)

    s_uu = sum_u2 + 2.0 * cross_uu
    s_vv = sum_v2 + 2.0 * cross_vv
    s_uv = sum_uv + cross_uv + cross_vu
    info = term1 - np.array([[s_uu, s_uv], [s_uv, s_vv]])
    cov = _invert_info(info, "transition")
    se = np.sqrt(np.diag(cov))
    return InformationMatrix(
        matrix=info, covariance=cov, se=se, labels=("a_12", "a_21")
    )


def from_fit(series: ObservedSeries, result) -> InformationMatrix | None:
    """Standard errors for a finished fit, or None when the latent
    family has no supported formula (chains with more than two states)."""
    theta = result.theta
    if isinstance(theta.latent, IIDStates):
        return info_iid(result.resp, theta.latent.p)
    if theta.j == 2:
        return info_markov2(series, theta)
    return None
