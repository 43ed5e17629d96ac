import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import penalty_entry_quad
from switchreg.errors import OutOfDomain, TooFewPoints
from switchreg.basis import (
    NUGGET,
    add_nugget,
    build_basis,
    design_matrix,
    kernel_gram,
    penalty_matrix,
)


def test_minimal_basis_has_four_functions():
    basis = build_basis(np.array([0.0, 1.0, 2.0, 3.0]), n_interior=0)
    assert basis.k == 4


def test_default_interior_count_on_dense_grid():
    x = np.linspace(1.0, 100.0, 199)
    basis = build_basis(x, n_interior=30)
    assert basis.k == 34
    assert basis.lo == pytest.approx(1.0)
    assert basis.hi == pytest.approx(100.0)


def test_too_few_points_rejected():
    with pytest.raises(TooFewPoints):
        build_basis(np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        build_basis(np.linspace(0, 1, 10), n_interior=-1)


@given(st.integers(0, 60))
def test_partition_of_unity(seed):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 5.0, 25))
    x[0], x[-1] = 0.0, 5.0
    basis = build_basis(x, n_interior=int(rng.integers(0, 8)))
    pts = rng.uniform(0.0, 5.0, 40)
    b = design_matrix(basis, pts)
    assert np.all(b >= 0.0)
    np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)


def test_boundary_rows_are_unit_vectors():
    x = np.linspace(2.0, 9.0, 30)
    basis = build_basis(x, n_interior=4)
    b = design_matrix(basis, np.array([2.0, 9.0]))
    lo_row = np.zeros(basis.k)
    lo_row[0] = 1.0
    hi_row = np.zeros(basis.k)
    hi_row[-1] = 1.0
    np.testing.assert_allclose(b[0], lo_row, atol=1e-14)
    np.testing.assert_allclose(b[1], hi_row, atol=1e-14)


def test_evaluation_outside_domain_rejected():
    basis = build_basis(np.linspace(0.0, 1.0, 20), n_interior=3)
    with pytest.raises(OutOfDomain):
        design_matrix(basis, np.array([0.5, 1.0 + 1e-9]))
    with pytest.raises(OutOfDomain):
        design_matrix(basis, np.array([-1e-9]))


def test_linear_functions_reproduced_exactly():
    rng = np.random.default_rng(3)
    x = np.sort(rng.uniform(0.0, 10.0, 60))
    basis = build_basis(x, n_interior=7)
    b = design_matrix(basis, x)
    target = 2.0 + 3.0 * x
    coef, *_ = np.linalg.lstsq(b, target, rcond=None)
    np.testing.assert_allclose(b @ coef, target, atol=1e-10)


def test_penalty_matrix_symmetric_positive_semidefinite():
    x = np.linspace(0.0, 10.0, 50)
    basis = build_basis(x, n_interior=6)
    r = penalty_matrix(basis)
    np.testing.assert_allclose(r, r.T, atol=1e-12)
    eigs = np.linalg.eigvalsh(r)
    assert eigs.min() >= -1e-10


def test_penalty_vanishes_on_affine_functions():
    x = np.linspace(0.0, 10.0, 50)
    basis = build_basis(x, n_interior=6)
    b = design_matrix(basis, x)
    r = penalty_matrix(basis)
    coef, *_ = np.linalg.lstsq(b, 2.0 - 0.7 * x, rcond=None)
    assert abs(coef @ r @ coef) <= 1e-8 * max(1.0, np.trace(r))


@pytest.mark.parametrize("pair", [(0, 0), (3, 3), (2, 5), (4, 2)])
def test_penalty_entries_match_adaptive_quadrature(pair):
    x = np.linspace(0.0, 10.0, 40)
    basis = build_basis(x, n_interior=5)
    r = penalty_matrix(basis)
    expected = penalty_entry_quad(basis.knots, *pair)
    scale = max(1.0, abs(expected))
    assert abs(r[pair] - expected) <= 1e-9 * scale


def test_penalty_zero_for_disjoint_supports():
    x = np.linspace(0.0, 10.0, 40)
    basis = build_basis(x, n_interior=5)
    r = penalty_matrix(basis)
    assert r[0, basis.k - 1] == 0.0


def test_kernel_diagonal_and_pinned_off_diagonal():
    s = 28.0
    u = 1.0 / (s * np.sqrt(2.0 * np.pi))
    a = kernel_gram(np.array([1.0, 1.5]), u, s)
    np.testing.assert_allclose(np.diag(a), u, rtol=1e-14)
    expected = u * np.exp(-0.25 / (2.0 * 784.0))
    np.testing.assert_allclose(a[0, 1], expected, rtol=1e-14)
    np.testing.assert_allclose(a[1, 0], expected, rtol=1e-14)


def test_kernel_decay_and_translation_invariance():
    x = np.array([0.0, 1.0, 50.0])
    a = kernel_gram(x, 1.0, 2.0)
    assert a[0, 2] < 1e-30
    b = kernel_gram(x + 17.0, 1.0, 2.0)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_kernel_rejects_nonpositive_parameters():
    x = np.array([0.0, 1.0])
    with pytest.raises(ValueError):
        kernel_gram(x, 0.0, 1.0)
    with pytest.raises(ValueError):
        kernel_gram(x, 1.0, -2.0)


def test_nugget_inflates_diagonal_only():
    a = kernel_gram(np.array([0.0, 1.0, 2.0]), 2.0, 1.5)
    out = add_nugget(a)
    np.testing.assert_allclose(np.diag(out), np.diag(a) + NUGGET * a[0, 0], rtol=1e-14)
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_array_equal(out[off], a[off])
