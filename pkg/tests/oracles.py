"""Independent reference implementations used to check the package.

Everything here is written the slow, obvious way: state paths are
enumerated outright, linear systems go through dense LU solves or
explicit inverses, integrals through adaptive quadrature, and Hessians
through central differences. None of it shares code paths with the
package internals it is used to verify.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import BSpline

LOG_2PI = math.log(2.0 * math.pi)


def markov_enumeration(y, means, sig2, pi, a):
    """Exact posteriors for a hidden Markov chain by summing all paths.

    Returns (loglik, marginals, pair marginals, joint) where joint is a
    callable taking 0-based indices and states and returning the exact
    posterior probability of that configuration.
    """
    y = np.asarray(y, float)
    means = np.asarray(means, float)
    j, n = means.shape
    paths = np.array(list(itertools.product(range(j), repeat=n)), dtype=int)
    logem = -0.5 * (
        LOG_2PI
        + np.log(sig2)[:, None]
        + (y[None, :] - means) ** 2 / np.asarray(sig2)[:, None]
    )
    with np.errstate(divide="ignore"):
        logp = np.log(pi)[paths[:, 0]] + logem[paths[:, 0], 0]
        loga = np.log(a)
    for i in range(1, n):
        logp = logp + loga[paths[:, i - 1], paths[:, i]] + logem[paths[:, i], i]
    shift = logp.max()
    w = np.exp(logp - shift)
    total = w.sum()
    loglik = shift + math.log(total)
    post = np.empty((n, j))
    pair = np.empty((n - 1, j, j))
    for i in range(n):
        for s in range(j):
            post[i, s] = w[paths[:, i] == s].sum() / total
    for i in range(n - 1):
        for s in range(j):
            for t in range(j):
                sel = (paths[:, i] == s) & (paths[:, i + 1] == t)
                pair[i, s, t] = w[sel].sum() / total

    def joint(indices, states):
        mask = np.ones(w.size, dtype=bool)
        for i, s in zip(indices, states):
            mask &= paths[:, i] == s
        return w[mask].sum() / total

    return loglik, post, pair, joint


def iid_scalar_posterior(y_i, means_i, sig2, p):
    """One-point mixture posterior using scalar arithmetic only."""
    dens = []
    for f, v, pr in zip(means_i, sig2, p):
        dens.append(pr * math.exp(-0.5 * (LOG_2PI + math.log(v) + (y_i - f) ** 2 / v)))
    total = math.fsum(dens)
    return [d / total for d in dens], total


def iid_scalar_loglik(y, means, sig2, p):
    j, n = np.asarray(means).shape
    out = 0.0
    for i in range(n):
        _, total = iid_scalar_posterior(y[i], [means[s][i] for s in range(j)], sig2, p)
        out += math.log(total)
    return out


def dense_penalized(y, b, r, w, lam):
    """Weighted penalized least squares through a dense LU solve."""
    bw = b * np.asarray(w, float)[:, None]
    lhs = b.T @ bw + 2.0 * lam * r
    coef = np.linalg.solve(lhs, bw.T @ np.asarray(y, float))
    hat = b @ np.linalg.solve(lhs, bw.T)
    return coef, hat


def naive_kernel_fit(y, gram, w):
    """A(A + W^-1)^-1 y with explicit inverses; needs all weights > 0."""
    w = np.asarray(w, float)
    if np.any(w <= 0):
        raise ValueError("naive form needs strictly positive weights")
    inner = np.linalg.inv(gram + np.diag(1.0 / w))
    hat = gram @ inner
    return hat @ np.asarray(y, float), hat


def unit_gcv_scores(y, b, r, lam_grid):
    """Unweighted generalized cross-validation scores over a grid."""
    y = np.asarray(y, float)
    n = y.size
    scores = []
    for lam in lam_grid:
        hat = b @ np.linalg.solve(b.T @ b + 2.0 * lam * r, b.T)
        resid = (y - hat @ y) / (1.0 - np.diag(hat))
        scores.append(float(resid @ resid) / n)
    return np.array(scores)


def fd_hessian(fun, x0, h=1e-4):
    """Central-difference Hessian of a scalar function."""
    x0 = np.asarray(x0, float)
    k = x0.size
    hess = np.empty((k, k))
    f0 = fun(x0)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h
        hess[i, i] = (fun(x0 + ei) - 2.0 * f0 + fun(x0 - ei)) / h**2
        for m in range(i):
            em = np.zeros(k)
            em[m] = h
            hess[i, m] = hess[m, i] = (
                fun(x0 + ei + em)
                - fun(x0 + ei - em)
                - fun(x0 - ei + em)
                + fun(x0 - ei - em)
            ) / (4.0 * h * h)
    return hess


def penalty_entry_quad(knots, k, m):
    """Integral of products of second derivatives by adaptive quadrature."""
    deg = 3
    nfun = len(knots) - deg - 1
    ck = np.zeros(nfun)
    ck[k] = 1.0
    cm = np.zeros(nfun)
    cm[m] = 1.0
    dk = BSpline(knots, ck, deg, extrapolate=False).derivative(2)
    dm = BSpline(knots, cm, deg, extrapolate=False).derivative(2)
    lo, hi = knots[deg], knots[-deg - 1]
    interior = np.unique(knots)
    interior = interior[(interior > lo) & (interior < hi)]

    def integrand(t):
        return float(np.nan_to_num(dk(t)) * np.nan_to_num(dm(t)))

    val, _ = quad(integrand, lo, hi, points=list(interior), limit=200)
    return val


def surrogate_value(y, means, sig2, resp_p, latent_kind, latent_params, pair=None, penalty=0.0):
    """Expected complete-data objective given responsibilities.

    ``latent_params`` is the probability vector for independent states or
    the (pi, a) pair for the chain; ``penalty`` is added as given.
    """
    y = np.asarray(y, float)
    means = np.asarray(means, float)
    sig2 = np.asarray(sig2, float)
    logem = -0.5 * (LOG_2PI + np.log(sig2)[:, None] + (y[None, :] - means) ** 2 / sig2[:, None])
    val = float(np.sum(resp_p * logem.T))
    if latent_kind == "iid":
        val += float(np.sum(resp_p * np.log(latent_params)[None, :]))
    else:
        pi, a = latent_params
        val += float(resp_p[0] @ np.log(pi))
        val += float(np.sum(pair * np.log(a)[None, :, :]))
    return val + penalty


def sojourn_lengths(z, state):
    """Run lengths of ``state``; the end-censored trailing run is dropped."""
    runs = []
    count = 0
    for s in z:
        if s == state:
            count += 1
        elif count:
            runs.append(count)
            count = 0
    return runs
