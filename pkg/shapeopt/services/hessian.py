"""
Brute-force Hessian oracles and the chain-rule assembly

    D_pp F~ = J_M^T D_mm L J_M + sum_k (D_m L)_k D_pp M_k

used to check that the parameterized second derivative is put together correctly.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from shapeopt.core.exceptions import DimensionMismatchError, DomainError, SizeGuardError
from shapeopt.services.deformation import DesignMap
from shapeopt.services.state_adjoint import (
    OBJECTIVE,
    Functional,
    ModelProblem,
    reduced_gradient,
    shifted_lagrangian_dm,
    solve_adjoint,
    solve_state,
)

logger = logging.getLogger(__name__)

MESH_HESSIAN_LIMIT = 400


@dataclass
class FDHessian:
    """Symmetrized finite-difference Hessian and its defect before symmetrization."""
    matrix: np.ndarray
    symmetry_defect: float


def _symmetrized(raw: np.ndarray) -> FDHessian:
    defect = float(np.max(np.abs(raw - raw.T))) if raw.size else 0.0
    return FDHessian(0.5 * (raw + raw.T), defect)


def objective_gradient(problem: ModelProblem, design: DesignMap, p: np.ndarray, tol: float = 1e-12,
                       functional: Union[str, Functional] = OBJECTIVE,
                       max_iter: Optional[int] = None) -> np.ndarray:
    """Reduced gradient with state and adjoint solved from scratch at p."""
    m = design.mesh(p)
    state = solve_state(problem, m, tol, max_iter)
    adjoint = solve_adjoint(problem, state, m, functional, tol, max_iter)
    return reduced_gradient(problem, design, p, state, adjoint, functional, m)


def mesh_covector(problem: ModelProblem, m: np.ndarray, tol: float = 1e-12,
                  functional: Union[str, Functional] = OBJECTIVE,
                  max_iter: Optional[int] = None) -> np.ndarray:
    """Free-node covector D_m L at a mesh, adjoint re-solved."""
    state = solve_state(problem, m, tol, max_iter)
    adjoint = solve_adjoint(problem, state, m, functional, tol, max_iter)
    return shifted_lagrangian_dm(problem, state, adjoint, m, functional)


def reduced_hessian_fd(problem: ModelProblem, design: DesignMap, p: np.ndarray, h: float = 1e-4,
                       tol: float = 1e-12, functional: Union[str, Functional] = OBJECTIVE) -> FDHessian:
    """Central differences of reduced-gradient columns, symmetrized."""
    if h <= 0.0:
        raise DomainError("h", h, "(0, inf)")
    p = np.asarray(p, dtype=float)
    n_p = design.n_params
    columns = []
    for j in range(n_p):
        step = np.zeros(n_p)
        step[j] = h
        plus = objective_gradient(problem, design, p + step, tol, functional)
        minus = objective_gradient(problem, design, p - step, tol, functional)
        columns.append((plus - minus) / (2.0 * h))
    raw = np.column_stack(columns) if columns else np.zeros((0, 0))
    result = _symmetrized(raw)
    logger.debug(f"FD reduced Hessian: n_p={n_p}, h={h}, symmetry defect {result.symmetry_defect:.3e}")
    return result


def mesh_level_hessian_fd(problem: ModelProblem, m: np.ndarray, h: float = 1e-4, tol: float = 1e-12,
                          functional: Union[str, Functional] = OBJECTIVE) -> FDHessian:
    """Central differences of D_m L over all mesh coordinates."""
    m = np.asarray(m, dtype=float)
    if m.size > MESH_HESSIAN_LIMIT:
        raise SizeGuardError("mesh_level_hessian_fd", int(m.size), MESH_HESSIAN_LIMIT)
    if h <= 0.0:
        raise DomainError("h", h, "(0, inf)")
    columns = []
    for k in range(m.size):
        step = np.zeros(m.size)
        step[k] = h
        plus = mesh_covector(problem, m + step, tol, functional)
        minus = mesh_covector(problem, m - step, tol, functional)
        columns.append((plus - minus) / (2.0 * h))
    return _symmetrized(np.column_stack(columns))


@dataclass
class FaaDiBrunoResult:
    term1: np.ndarray
    term2: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.term1 + self.term2


def faa_di_bruno_assemble(design: DesignMap, p: np.ndarray, H_mm: np.ndarray, w: np.ndarray) -> FaaDiBrunoResult:
    """term1 = J_M^T H_mm J_M; term2 = sum_k w_k D_pp M_k reduced through the deformation."""
    jacobian = design.jacobian(p)
    H_mm = np.asarray(H_mm, dtype=float)
    w = np.asarray(w, dtype=float).reshape(-1)
    n_m = jacobian.shape[0]
    if H_mm.shape != (n_m, n_m):
        raise DimensionMismatchError("H_mm", (n_m, n_m), H_mm.shape)
    if w.shape[0] != n_m:
        raise DimensionMismatchError("w", n_m, w.shape[0])
    term1 = jacobian.T @ H_mm @ jacobian
    term2 = design.second_derivative_contraction(p, w)
    return FaaDiBrunoResult(term1=term1, term2=term2)


@dataclass
class HessianReport:
    """FD Hessian of F~ against the chain-rule assembly."""
    H_fd: np.ndarray
    H_fdb: np.ndarray
    term1_norm: float
    term2_norm: float
    max_abs_error: float
    symmetry_defect: float

    @property
    def relative_error(self) -> float:
        scale = float(np.max(np.abs(self.H_fd), initial=0.0))
        return self.max_abs_error / max(scale, np.finfo(float).tiny)

    def to_text(self) -> str:
        return "\n".join([
            f"n_params: {self.H_fd.shape[0]}",
            f"term1_norm: {self.term1_norm:.6e}",
            f"term2_norm: {self.term2_norm:.6e}",
            f"max_abs_error: {self.max_abs_error:.6e}",
            f"relative_error: {self.relative_error:.6e}",
            f"symmetry_defect: {self.symmetry_defect:.6e}",
        ])


def hessian_report(problem: ModelProblem, design: DesignMap, p: np.ndarray, h: float = 1e-4,
                   tol: float = 1e-12) -> HessianReport:
    p = np.asarray(p, dtype=float)
    m = design.mesh(p)
    w = mesh_covector(problem, m, tol)
    H_mm = mesh_level_hessian_fd(problem, m, h, tol).matrix
    assembled = faa_di_bruno_assemble(design, p, H_mm, w)
    fd = reduced_hessian_fd(problem, design, p, h, tol)
    H_fdb = assembled.matrix
    return HessianReport(
        H_fd=fd.matrix,
        H_fdb=H_fdb,
        term1_norm=float(np.max(np.abs(assembled.term1), initial=0.0)),
        term2_norm=float(np.max(np.abs(assembled.term2), initial=0.0)),
        max_abs_error=float(np.max(np.abs(H_fdb - fd.matrix), initial=0.0)),
        symmetry_defect=fd.symmetry_defect,
    )
