"""Posterior state inference: emission densities, the independent-state
E-step, the scaled forward-backward recursions for Markov states, and
joint posteriors over small index tuples.

Emission densities are evaluated in log domain and shifted by the
per-step maximum before exponentiation, so the recursions stay in range
even when the noise variance is tiny and single densities overflow the
textbook linear-domain formulas. All outputs are invariant to both the
shift and the per-step scaling constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllZeroLikelihood, IndexOutOfRange
from .model import (
    IIDStates,
    MarkovStates,
    ObservedSeries,
    Responsibilities,
    Theta,
)

LOG_2PI = float(np.log(2.0 * np.pi))


def log_emission_density(y, f, sig2):
    """Log of the Gaussian density N(y; f, sig2)."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    sig2 = np.asarray(sig2, dtype=float)
    return -0.5 * (LOG_2PI + np.log(sig2) + (y - f) ** 2 / sig2)


def emission_density(y, f, sig2):
    """Gaussian density N(y; f, sig2) in linear domain."""
    return np.exp(log_emission_density(y, f, sig2))


def log_emission_matrix(series: ObservedSeries, theta: Theta) -> np.ndarray:
    """Per-point, per-regime log emission densities as an (n, J) matrix."""
    means = theta.funcs.means(series.x)
    sig2 = theta.noise.variances
    return log_emission_density(series.y[:, None], means, sig2[None, :])


def estep_iid(
    series: ObservedSeries, theta: Theta
) -> tuple[Responsibilities, float]:
    """Posterior state probabilities for independent states.

    Returns the responsibilities and the incomplete-data log-likelihood
    sum_i log sum_j p_j N(y_i; f_j(x_i), sigma_j^2), both computed via a
    row-wise log-sum-exp.
    """
    if not isinstance(theta.latent, IIDStates):
        raise TypeError("estep_iid requires an IID latent model")
    logb = log_emission_matrix(series, theta)
    with np.errstate(divide="ignore"):
        scored = logb + np.log(theta.latent.p)[None, :]
    shift = np.max(scored, axis=1)
    if not np.all(np.isfinite(shift)):
        raise AllZeroLikelihood("every regime density underflowed at some point")
    lse = shift + np.log(np.sum(np.exp(scored - shift[:, None]), axis=1))
    p = np.exp(scored - lse[:, None])
    return Responsibilities(p=p), float(np.sum(lse))


@dataclass(frozen=True, eq=False)
class ForwardBackward:
    """Scaled forward and backward variables.

    ``delta`` rows are the normalized forward probabilities, ``beta`` the
    matching scaled backward variables, ``c`` the per-step normalization
    constants, and ``shifts`` the per-step log-emission maxima taken out
    before exponentiation. ``btilde`` caches the shifted linear-domain
    emissions for reuse by pair and joint posteriors. The log-likelihood
    is sum(log c + shifts).
    """

    delta: np.ndarray
    beta: np.ndarray
    c: np.ndarray
    shifts: np.ndarray
    btilde: np.ndarray
    loglik: float

    @property
    def n(self) -> int:
        return self.delta.shape[0]

    @property
    def j(self) -> int:
        return self.delta.shape[1]


def estep_markov(
    series: ObservedSeries, theta: Theta
) -> tuple[Responsibilities, ForwardBackward]:
    """Scaled forward-backward pass for Markov states.

    Returns responsibilities with pairwise posteriors and the
    forward-backward bundle whose loglik equals log p(y | theta).
    """
    if not isinstance(theta.latent, MarkovStates):
        raise TypeError("estep_markov requires a Markov latent model")
    logb = log_emission_matrix(series, theta)
    n, j = logb.shape
    shifts = np.max(logb, axis=1)
    if not np.all(np.isfinite(shifts)):
        raise AllZeroLikelihood("every regime density underflowed at some point")
    btilde = np.exp(logb - shifts[:, None])

    pi, a = theta.latent.pi, theta.latent.a
    delta = np.empty((n, j))
    c = np.empty(n)
    d = pi * btilde[0]
    c[0] = d.sum()
    if not (np.isfinite(c[0]) and c[0] > 0):
        raise AllZeroLikelihood("forward pass collapsed at the first step")
    delta[0] = d / c[0]
    for i in range(1, n):
        d = (delta[i - 1] @ a) * btilde[i]
        c[i] = d.sum()
        if not (np.isfinite(c[i]) and c[i] > 0):
            raise AllZeroLikelihood(f"forward pass collapsed at step {i}")
        delta[i] = d / c[i]

    beta = np.ones((n, j))
    for i in range(n - 2, -1, -1):
        beta[i] = (a @ (btilde[i + 1] * beta[i + 1])) / c[i + 1]

    post = delta * beta
    post /= post.sum(axis=1, keepdims=True)

    pair = (
        delta[:-1, :, None]
        * a[None, :, :]
        * (btilde[1:] * beta[1:] / c[1:, None])[:, None, :]
    )
    pair /= pair.sum(axis=(1, 2), keepdims=True)

    loglik = float(np.sum(np.log(c) + shifts))
    fb = ForwardBackward(
        delta=delta, beta=beta, c=c, shifts=shifts, btilde=btilde, loglik=loglik
    )
    return Responsibilities(p=post, pair=pair), fb


def step_matrices(fb: ForwardBackward, a: np.ndarray) -> np.ndarray:
    """One-step scaled transition operators M[i][l, m] for steps
    i = 1..n-1, the building blocks of joint posteriors: entry (l, m) is
    a[l, m] * btilde[i, m] / c[i]."""
    return a[None, :, :] * (fb.btilde[1:] / fb.c[1:, None])[:, None, :]


def joint_posterior(
    series: ObservedSeries,
    theta: Theta,
    indices: tuple[int, ...],
    states: tuple[int, ...],
    fb: ForwardBackward | None = None,
) -> float:
    """Joint posterior probability P(z[i_1] = s_1, ..., z[i_m] = s_m | y)
    for strictly increasing 0-based positions.

    Gaps between pinned positions are bridged by products of the
    one-step operators, so any small tuple is handled by one code path.
    Pass a precomputed forward-backward bundle to amortize repeated
    queries.
    """
    if fb is None:
        _, fb = estep_markov(series, theta)
    n, j = fb.n, fb.j
    idx = tuple(int(i) for i in indices)
    st = tuple(int(s) for s in states)
    if len(idx) == 0 or len(idx) != len(st):
        raise ValueError("indices and states must be matching nonempty tuples")
    if any(i < 0 or i >= n for i in idx):
        raise IndexOutOfRange(f"positions must lie in [0, {n - 1}]")
    if any(b <= a for a, b in zip(idx[:-1], idx[1:])):
        raise ValueError("positions must be strictly increasing")
    if any(s < 0 or s >= j for s in st):
        raise ValueError(f"states must lie in [0, {j - 1}]")

    a = theta.latent.a
    prob = fb.delta[idx[0], st[0]]
    for (i_prev, s_prev), (i_cur, s_cur) in zip(
        zip(idx[:-1], st[:-1]), zip(idx[1:], st[1:])
    ):
        v = np.zeros(j)
        v[s_prev] = 1.0
        for w in range(i_prev + 1, i_cur + 1):
            v = (v @ a) * btilde_row(fb, w)
        prob *= v[s_cur]
    prob *= fb.beta[idx[-1], st[-1]]
    return float(prob)


def btilde_row(fb: ForwardBackward, w: int) -> np.ndarray:
    return fb.btilde[w] / fb.c[w]
