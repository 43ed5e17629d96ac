"""Cubic B-spline design and curvature-penalty matrices, and the
squared-exponential kernel Gram matrix.

The spline basis uses knots at quantiles of the data with boundary knots
repeated to full multiplicity, so the basis functions form a partition of
unity over [min(x), max(x)]. The penalty matrix holds the exact integrals
of products of second derivatives, computed per knot interval with
two-node Gauss-Legendre quadrature: second derivatives of cubic splines
are piecewise linear, so their products are piecewise quadratic and the
two-node rule integrates them exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import OutOfDomain, TooFewPoints

DEGREE = 3
NUGGET = 1e-8


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Knot sequence and size of a cubic B-spline basis."""

    knots: np.ndarray
    k: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))

    @property
    def lo(self) -> float:
        return float(self.knots[DEGREE])

    @property
    def hi(self) -> float:
        return float(self.knots[-DEGREE - 1])


def build_basis(x: np.ndarray, n_interior: int = 30) -> SplineBasis:
    """Place interior knots at quantiles of ``x``.

    Boundary knots sit at min(x) and max(x) with multiplicity 4, giving
    ``n_interior + 4`` basis functions. Duplicated quantiles (heavily tied
    data) collapse to a shorter knot vector and a correspondingly smaller
    basis.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 4:
        raise TooFewPoints(f"need at least 4 points to build a basis, got {x.size}")
    if n_interior < 0:
        raise ValueError("n_interior must be nonnegative")
    lo, hi = float(np.min(x)), float(np.max(x))
    if n_interior > 0:
        probs = np.arange(1, n_interior + 1) / (n_interior + 1)
        interior = np.quantile(x, probs)
        interior = interior[(interior > lo) & (interior < hi)]
        interior = np.unique(interior)
    else:
        interior = np.empty(0)
    knots = np.concatenate([[lo] * (DEGREE + 1), interior, [hi] * (DEGREE + 1)])
    return SplineBasis(knots=knots, k=interior.size + DEGREE + 1)


def design_matrix(basis: SplineBasis, x: np.ndarray) -> np.ndarray:
    """Evaluate all basis functions at ``x``, one row per point.

    Rows sum to one and entries are nonnegative. Points outside the knot
    range raise OutOfDomain.
    """
    x = np.asarray(x, dtype=float)
    if x.size and (np.min(x) < basis.lo or np.max(x) > basis.hi):
        raise OutOfDomain(
            f"points outside [{basis.lo}, {basis.hi}] cannot be evaluated"
        )
    mat = BSpline.design_matrix(x, basis.knots, DEGREE, extrapolate=False)
    return mat.toarray()


def penalty_matrix(basis: SplineBasis) -> np.ndarray:
    """Integrals of second-derivative products, entry by entry.

    Symmetric positive semidefinite with a two-dimensional null space
    spanned by the coefficient vectors of affine functions.
    """
    t, k = basis.knots, basis.k
    d2 = BSpline(t, np.eye(k), DEGREE).derivative(2)
    breaks = np.unique(t)
    r = np.zeros((k, k))
    # 2-node Gauss-Legendre on [-1, 1]: nodes +-1/sqrt(3), weights 1.
    node = 1.0 / np.sqrt(3.0)
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        for xi in (mid - half * node, mid + half * node):
            row = d2(xi)
            r += half * np.outer(row, row)
    return r


def kernel_gram(x: np.ndarray, u: float, s: float) -> np.ndarray:
    """Squared-exponential Gram matrix with signal variance ``u`` and
    length scale ``s``. The diagonal equals ``u`` exactly; the
    regularizing nugget is added by callers at factorization time, never
    stored here.
    """
    if u <= 0 or s <= 0:
        raise ValueError("kernel parameters must be positive")
    x = np.asarray(x, dtype=float)
    d = x[:, None] - x[None, :]
    return u * np.exp(-0.5 * (d / s) ** 2)


def add_nugget(a: np.ndarray) -> np.ndarray:
    """Inflate the diagonal by NUGGET times the signal variance, read off
    the diagonal itself."""
    return a + (NUGGET * a[0, 0]) * np.eye(a.shape[0])
