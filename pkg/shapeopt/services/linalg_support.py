"""
Shared numerical kernels.

Dense symmetric factorizations with explicit pivot checks, a symmetric sparse
container that stores one triangle, power iteration and a dense generalized
symmetric eigensolve used as a test oracle.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg import lapack

from shapeopt.core.exceptions import (
    DimensionMismatchError,
    NotPositiveDefiniteError,
    SingularMatrixError,
    SizeGuardError,
)

logger = logging.getLogger(__name__)

# Relative pivot threshold below which a factorization is treated as singular
PIVOT_RTOL = 1e3 * np.finfo(float).eps
GENERALIZED_EIGEN_LIMIT = 256


class SymSparse:
    """Symmetric sparse matrix holding only its lower triangle."""

    def __init__(self, lower: sp.spmatrix):
        lower = sp.csr_matrix(sp.tril(lower))
        if lower.shape[0] != lower.shape[1]:
            raise DimensionMismatchError("SymSparse", "square", lower.shape)
        self.lower = lower
        self.n = lower.shape[0]

    @classmethod
    def from_triplets(cls, rows, cols, values, n: int) -> "SymSparse":
        """Assemble from full (symmetric) triplets; duplicates are summed."""
        full = sp.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsr()
        return cls(full)

    @classmethod
    def from_dense(cls, matrix: np.ndarray) -> "SymSparse":
        return cls(sp.csr_matrix(np.asarray(matrix, dtype=float)))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    def tocsr(self) -> sp.csr_matrix:
        diag = sp.diags(self.lower.diagonal())
        return sp.csr_matrix(self.lower + self.lower.T - diag)

    def toarray(self) -> np.ndarray:
        return self.tocsr().toarray()

    def diagonal(self) -> np.ndarray:
        return self.lower.diagonal()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise DimensionMismatchError("SymSparse.matvec", self.n, x.shape[0])
        d = self.lower.diagonal()
        if x.ndim == 2:
            d = d[:, None]
        return self.lower @ x + self.lower.T @ x - d * x

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.matvec(x)

    def scaled_sum(self, alpha: float, other: "SymSparse", beta: float) -> "SymSparse":
        """Return alpha*self + beta*other."""
        return SymSparse(alpha * self.lower + beta * other.lower)


MatrixLike = Union[np.ndarray, sp.spmatrix, SymSparse]


def as_dense(matrix: MatrixLike) -> np.ndarray:
    if isinstance(matrix, SymSparse):
        return matrix.toarray()
    if sp.issparse(matrix):
        return matrix.toarray()
    return np.asarray(matrix, dtype=float)


def cholesky(matrix: MatrixLike, name: str = "A") -> np.ndarray:
    """Lower Cholesky factor; raises with the failing pivot index."""
    a = as_dense(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(name, "square matrix", a.shape)
    n = a.shape[0]
    if n == 0:
        return a.copy()
    factor, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(name, int(info) - 1)
    if info < 0:
        raise ValueError(f"dpotrf argument {-info} invalid")
    pivots = np.diag(factor) ** 2
    scale = max(float(np.max(np.abs(np.diag(a)))), np.finfo(float).tiny)
    tiny = np.flatnonzero(pivots <= PIVOT_RTOL * scale)
    if tiny.size:
        raise SingularMatrixError(int(tiny[0]), float(pivots[tiny[0]]))
    return np.tril(factor)


def is_positive_definite(matrix: MatrixLike) -> bool:
    """Attempted Cholesky factorization."""
    try:
        cholesky(matrix)
    except (NotPositiveDefiniteError, SingularMatrixError):
        return False
    return True


def _check_ldl_pivots(a: np.ndarray) -> None:
    _, d, perm = scipy.linalg.ldl(a, lower=True)
    scale = max(float(np.max(np.abs(a))), np.finfo(float).tiny)
    n = d.shape[0]
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            block = d[i:i + 2, i:i + 2]
            eig = np.abs(np.linalg.eigvalsh(block))
            if eig.min() <= PIVOT_RTOL * scale:
                raise SingularMatrixError(i + int(np.argmin(eig)), float(eig.min()))
            i += 2
        else:
            if abs(d[i, i]) <= PIVOT_RTOL * scale:
                raise SingularMatrixError(i, float(abs(d[i, i])))
            i += 1


def sym_solve(matrix: MatrixLike, rhs: np.ndarray, assume: str = "auto") -> np.ndarray:
    """
    Solve a symmetric system.

    assume="spd" uses Cholesky, "indefinite" a Bunch-Kaufman LDL^T
    factorization (saddle systems), "auto" tries Cholesky first.
    """
    a = as_dense(matrix)
    b = np.asarray(rhs, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError("matrix", "square matrix", a.shape)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatchError("rhs", a.shape[0], b.shape[0])
    if a.shape[0] == 0:
        return b.copy()

    if assume in ("spd", "auto"):
        try:
            factor = cholesky(a)
            x = scipy.linalg.cho_solve((factor, True), b)
            _check_residual(a, x, b)
            return x
        except NotPositiveDefiniteError:
            if assume == "spd":
                raise
        except SingularMatrixError:
            if assume == "spd":
                raise

    _check_ldl_pivots(a)
    x = scipy.linalg.solve(a, b, assume_a="sym")
    _check_residual(a, x, b)
    return x


def _check_residual(a: np.ndarray, x: np.ndarray, b: np.ndarray) -> None:
    residual = np.max(np.abs(a @ x - b)) if b.size else 0.0
    bound = 1e-10 * (np.max(np.abs(a).sum(axis=1)) * np.max(np.abs(x)) + np.max(np.abs(b)))
    if residual > bound:
        logger.warning(f"Symmetric solve residual {residual:.3e} exceeds bound {bound:.3e}")
        raise SingularMatrixError(-1, float(residual))


@dataclass
class PowerIterationResult:
    """Dominant eigenvalue estimate."""
    value: float
    iterations: int
    converged: bool


def power_iteration(
    operator: Union[MatrixLike, Callable[[np.ndarray], np.ndarray]],
    n: Optional[int] = None,
    tol: float = 1e-10,
    max_iter: int = 10000,
    seed: int = 0,
) -> PowerIterationResult:
    """
    Estimate the eigenvalue of largest magnitude of a symmetric operator.

    Uses Rayleigh quotients of normalized iterates. When max_iter is hit the
    last estimate is returned with converged=False and a warning is logged.
    """
    if callable(operator) and not isinstance(operator, (np.ndarray, SymSparse)) and not sp.issparse(operator):
        apply = operator
        if n is None:
            raise DimensionMismatchError("n", "operator dimension", None)
    else:
        if isinstance(operator, SymSparse):
            matrix = operator
        else:
            matrix = operator if sp.issparse(operator) else np.asarray(operator, dtype=float)
        if matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatchError("operator", "square", matrix.shape)
        n = matrix.shape[0]

        def apply(v: np.ndarray) -> np.ndarray:
            return matrix @ v

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for k in range(1, max_iter + 1):
        w = apply(v)
        new_estimate = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return PowerIterationResult(0.0, k, True)
        v = w / norm
        if k > 1 and abs(new_estimate - estimate) <= tol * abs(new_estimate):
            return PowerIterationResult(new_estimate, k, True)
        estimate = new_estimate

    logger.warning(f"Power iteration did not settle in {max_iter} iterations; estimate {estimate:.6e}")
    return PowerIterationResult(estimate, max_iter, False)


def generalized_eigen(a: MatrixLike, b: MatrixLike) -> Tuple[np.ndarray, np.ndarray]:
    """Dense solve of A v = lambda B v for symmetric A and SPD B; ascending order."""
    a_dense = as_dense(a)
    b_dense = as_dense(b)
    n = a_dense.shape[0]
    if n > GENERALIZED_EIGEN_LIMIT:
        raise SizeGuardError("generalized_eigen", n, GENERALIZED_EIGEN_LIMIT)
    if b_dense.shape != a_dense.shape:
        raise DimensionMismatchError("B", a_dense.shape, b_dense.shape)
    cholesky(b_dense, name="B")
    values, vectors = scipy.linalg.eigh(a_dense, b_dense)
    return values, vectors
