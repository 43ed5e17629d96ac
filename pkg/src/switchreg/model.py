"""Domain types shared by every module: the observed series, latent-state
models, regime-function representations, noise models, and the assembled
parameter vector theta.

All types are immutable after construction. Probabilities live in linear
domain at the type level; inference code works in scaled or log domain
internally and renormalizes on output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .basis import SplineBasis, design_matrix
from .errors import InvariantViolation

PROB_TOL = 1e-12
ROW_SUM_TOL = 1e-10
PAIR_MARGIN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ObservedSeries:
    """The (x, y) pairs with strictly increasing x."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.x.ndim != 1 or self.y.ndim != 1 or self.x.size != self.y.size:
            raise InvariantViolation("x and y must be 1-d arrays of equal length")
        if self.x.size < 2:
            raise InvariantViolation("a series needs at least 2 points")
        if not np.all(np.diff(self.x) > 0):
            raise InvariantViolation(
                "x must be strictly increasing; resolve ties with jitter_duplicates"
            )

    @property
    def n(self) -> int:
        return self.x.size


@dataclass(frozen=True, eq=False)
class IIDStates:
    """Independent states with marginal probabilities p."""

    p: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))

    @property
    def j(self) -> int:
        return self.p.size


@dataclass(frozen=True, eq=False)
class MarkovStates:
    """First-order chain with initial probabilities pi and row-stochastic
    transition matrix a."""

    pi: np.ndarray
    a: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))

    @property
    def j(self) -> int:
        return self.pi.size


LatentModel = Union[IIDStates, MarkovStates]


@dataclass(frozen=True, eq=False)
class SplineFunctions:
    """Regime functions as coefficient vectors over a shared cubic
    B-spline basis, with one curvature penalty weight per regime."""

    basis: SplineBasis
    coef: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "coef", np.atleast_2d(np.asarray(self.coef, dtype=float)))
        object.__setattr__(self, "lambdas", np.asarray(self.lambdas, dtype=float))

    @property
    def j(self) -> int:
        return self.coef.shape[0]

    def means(self, x: np.ndarray) -> np.ndarray:
        """Fitted values at ``x`` as an (n, J) matrix."""
        return design_matrix(self.basis, x) @ self.coef.T


@dataclass(frozen=True, eq=False)
class KernelFunctions:
    """Regime functions as fitted vectors on the observation grid, under a
    squared-exponential kernel with per-regime signal variance u and
    length scale s. The smoothing parameter of regime j is s_j."""

    values: np.ndarray
    u: np.ndarray
    s: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.atleast_2d(np.asarray(self.values, dtype=float)))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))

    @property
    def j(self) -> int:
        return self.values.shape[0]

    @property
    def lambdas(self) -> np.ndarray:
        return self.s

    def means(self, x: np.ndarray) -> np.ndarray:
        if np.asarray(x).size != self.values.shape[1]:
            raise InvariantViolation(
                "kernel regime functions are defined on the grid they were fit on"
            )
        return self.values.T


RegimeFunctions = Union[SplineFunctions, KernelFunctions]


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Per-regime error variances; ``shared`` means they are all one
    common value."""

    variances: np.ndarray
    shared: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))

    @property
    def j(self) -> int:
        return self.variances.size


@dataclass(frozen=True, eq=False)
class Theta:
    """The full parameter vector: latent-state model, regime functions,
    and noise model, with a consistent number of regimes."""

    latent: LatentModel
    funcs: RegimeFunctions
    noise: NoiseModel

    @property
    def j(self) -> int:
        return self.latent.j


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """Posterior state probabilities p[i, j]; Markov fits also carry the
    pairwise posteriors pair[i-1, l, j] for transitions into step i."""

    p: np.ndarray
    pair: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.pair is not None:
            object.__setattr__(self, "pair", np.asarray(self.pair, dtype=float))

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def j(self) -> int:
        return self.p.shape[1]


def _check_probability_vector(v: np.ndarray, name: str) -> None:
    if np.any(v < 0) or np.any(v > 1):
        raise InvariantViolation(f"{name} entries must lie in [0, 1]")
    if abs(float(np.sum(v)) - 1.0) > PROB_TOL:
        raise InvariantViolation(f"{name} must sum to 1")


def validate_theta(theta: Theta) -> None:
    """Raise InvariantViolation naming the first failing invariant.

    Checks, in order: latent probabilities lie in [0, 1] and normalize;
    regime counts agree across the three members; smoothing parameters
    and kernel parameters are positive; variances are positive.
    """
    latent = theta.latent
    if isinstance(latent, IIDStates):
        _check_probability_vector(latent.p, "p")
    else:
        _check_probability_vector(latent.pi, "pi")
        if latent.a.shape != (latent.j, latent.j):
            raise InvariantViolation("transition matrix must be J x J")
        for row in range(latent.j):
            _check_probability_vector(latent.a[row], f"a[{row}]")
    if theta.funcs.j != latent.j or theta.noise.j != latent.j:
        raise InvariantViolation("regime count must agree across latent, funcs, noise")
    if latent.j < 1:
        raise InvariantViolation("at least one regime is required")
    if np.any(theta.funcs.lambdas <= 0):
        raise InvariantViolation("smoothing parameters must be positive")
    if isinstance(theta.funcs, KernelFunctions):
        if np.any(theta.funcs.u <= 0) or np.any(theta.funcs.s <= 0):
            raise InvariantViolation("kernel parameters must be positive")
    if np.any(theta.noise.variances <= 0):
        raise InvariantViolation("variances must be positive (variance>0)")


def check_responsibilities(resp: Responsibilities) -> None:
    """Assert the row-sum and marginalization identities that every E-step
    output satisfies."""
    p = resp.p
    if np.any(p < -ROW_SUM_TOL) or np.any(p > 1 + ROW_SUM_TOL):
        raise InvariantViolation("responsibilities must lie in [0, 1]")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise InvariantViolation("responsibility rows must sum to 1")
    if resp.pair is not None:
        pair = resp.pair
        lhs = pair.sum(axis=2)
        if np.max(np.abs(lhs - p[:-1])) > PAIR_MARGIN_TOL:
            raise InvariantViolation("pair posteriors must marginalize to p[i-1]")
        rhs = pair.sum(axis=1)
        if np.max(np.abs(rhs - p[1:])) > PAIR_MARGIN_TOL:
            raise InvariantViolation("pair posteriors must marginalize to p[i]")
