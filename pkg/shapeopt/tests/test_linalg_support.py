import numpy as np
import pytest
import scipy.sparse as sp

from shapeopt.core.exceptions import (
    DimensionMismatchError,
    NotPositiveDefiniteError,
    SingularMatrixError,
    SizeGuardError,
)
from shapeopt.services.linalg_support import (
    SymSparse,
    cholesky,
    generalized_eigen,
    is_positive_definite,
    power_iteration,
    sym_solve,
)


@pytest.fixture
def spd_matrix(rng):
    a = rng.standard_normal((6, 6))
    return a @ a.T + 6.0 * np.eye(6)


def test_symsparse_matches_dense(spd_matrix, rng):
    """Only the lower triangle is stored but products use the full matrix."""
    sym = SymSparse.from_dense(spd_matrix)
    x = rng.standard_normal(6)
    assert sym.lower.nnz <= 21
    np.testing.assert_allclose(sym @ x, spd_matrix @ x, rtol=1e-13)
    np.testing.assert_allclose(sym.toarray(), spd_matrix)


def test_symsparse_block_matvec(spd_matrix, rng):
    sym = SymSparse.from_dense(spd_matrix)
    x = rng.standard_normal((6, 3))
    np.testing.assert_allclose(sym @ x, spd_matrix @ x, rtol=1e-13)


def test_symsparse_triplets_sum_duplicates():
    sym = SymSparse.from_triplets([0, 0, 1, 0, 1], [0, 0, 1, 1, 0], [1.0, 2.0, 4.0, 0.5, 0.5], 2)
    np.testing.assert_allclose(sym.toarray(), [[3.0, 0.5], [0.5, 4.0]])


def test_symsparse_scaled_sum():
    a = SymSparse.from_dense(np.eye(3))
    b = SymSparse(sp.diags([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(a.scaled_sum(2.0, b, 0.5).diagonal(), [2.5, 3.0, 3.5])


def test_symsparse_matvec_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        SymSparse.from_dense(np.eye(3)) @ np.ones(4)


def test_cholesky_reconstructs(spd_matrix):
    factor = cholesky(spd_matrix)
    np.testing.assert_allclose(factor @ factor.T, spd_matrix, rtol=1e-12)
    assert np.allclose(np.triu(factor, 1), 0.0)


def test_cholesky_reports_failing_pivot():
    matrix = np.diag([1.0, 2.0, -1.0])
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky(matrix)
    assert info.value.details["pivot"] == 2


def test_is_positive_definite():
    assert is_positive_definite(np.diag([1.0, 0.5]))
    assert not is_positive_definite(np.diag([1.0, -0.5]))
    assert not is_positive_definite(np.zeros((2, 2)))


def test_sym_solve_spd(spd_matrix, rng):
    b = rng.standard_normal(6)
    x = sym_solve(spd_matrix, b, assume="spd")
    np.testing.assert_allclose(spd_matrix @ x, b, atol=1e-12)


def test_sym_solve_indefinite_saddle():
    """KKT matrix [[I, a], [a^T, 0]] is indefinite but regular."""
    kkt = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    rhs = np.array([1.0, 0.0, 0.0])
    x = sym_solve(kkt, rhs)
    np.testing.assert_allclose(x, [0.5, -0.5, 0.5], atol=1e-14)


def test_sym_solve_spd_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        sym_solve(np.diag([1.0, -1.0]), np.ones(2), assume="spd")


def test_sym_solve_singular():
    with pytest.raises(SingularMatrixError):
        sym_solve(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2), assume="indefinite")


def test_sym_solve_empty_system():
    assert sym_solve(np.zeros((0, 0)), np.zeros(0)).shape == (0,)


def test_power_iteration_dominant_value():
    result = power_iteration(np.diag([3.0, 1.0, 0.5]), tol=1e-12)
    assert result.converged
    assert result.value == pytest.approx(3.0, rel=1e-9)


def test_power_iteration_callable_needs_dimension():
    with pytest.raises(DimensionMismatchError):
        power_iteration(lambda v: 2.0 * v)
    assert power_iteration(lambda v: 2.0 * v, n=4).value == pytest.approx(2.0)


def test_power_iteration_max_iter_returns_estimate():
    result = power_iteration(np.diag([1.0, 0.999999]), tol=1e-16, max_iter=3)
    assert not result.converged
    assert result.iterations == 3


def test_generalized_eigen_ascending():
    values, vectors = generalized_eigen(np.diag([4.0, 1.0]), np.diag([2.0, 1.0]))
    np.testing.assert_allclose(values, [1.0, 2.0])
    assert vectors.shape == (2, 2)


def test_generalized_eigen_size_guard():
    with pytest.raises(SizeGuardError):
        generalized_eigen(np.eye(257), np.eye(257))
