"""
Reduced SQP with a Hessian approximation B, its convex QP subsolvers,
regularization of B and the projected gradient-descent baseline.

QP convention: minimize 1/2 v^T B v + g^T v subject to J_E v + E = 0 and
J_C v + C >= 0, with stationarity B v + g + J_E^T nu - J_C^T mu = 0, mu >= 0.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from shapeopt.core.config import get_settings
from shapeopt.core.exceptions import (
    DimensionMismatchError,
    DomainError,
    OptimizationError,
    QPCyclingError,
    QPInfeasibleError,
    RankDeficientConstraintError,
    RegularizationError,
    ShapeOptException,
)
from shapeopt.core.logging import log_iteration
from shapeopt.schemas.history import IterationRecord, OptHistory
from shapeopt.services.deformation import DesignMap
from shapeopt.services.linalg_support import cholesky, is_positive_definite, sym_solve
from shapeopt.services.state_adjoint import DesignEvaluation, ModelProblem, evaluate_design

logger = logging.getLogger(__name__)

REGULARIZATION_LADDER = (0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6, 1e8)
RANK_RTOL = 1e-10

BuilderFn = Callable[[DesignMap, np.ndarray], np.ndarray]


@dataclass
class QPResult:
    """Step and multipliers of a quadratic subproblem."""
    v: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    active_set: List[int] = field(default_factory=list)
    kkt_residual: float = 0.0


def _as_rows(matrix: Optional[np.ndarray], n_p: int, name: str) -> np.ndarray:
    if matrix is None:
        return np.zeros((0, n_p))
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        return np.zeros((0, n_p))
    matrix = matrix.reshape(-1, n_p) if matrix.ndim == 1 else matrix
    if matrix.shape[1] != n_p:
        raise DimensionMismatchError(name, f"(*, {n_p})", matrix.shape)
    return matrix


def _as_values(values: Optional[np.ndarray], n: int, name: str) -> np.ndarray:
    values = np.zeros(0) if values is None else np.asarray(values, dtype=float).reshape(-1)
    if values.shape[0] != n:
        raise DimensionMismatchError(name, n, values.shape[0])
    return values


def kkt_residual(B: np.ndarray, g: np.ndarray, J_E: np.ndarray, E: np.ndarray, J_C: np.ndarray,
                 C: np.ndarray, v: np.ndarray, nu: np.ndarray, mu: np.ndarray) -> float:
    """Largest violation among stationarity, feasibility, dual sign and complementarity."""
    parts = [np.max(np.abs(B @ v + g + J_E.T @ nu - J_C.T @ mu), initial=0.0)]
    parts.append(np.max(np.abs(J_E @ v + E), initial=0.0))
    slack = J_C @ v + C
    parts.append(max(0.0, -float(np.min(slack, initial=0.0))))
    parts.append(max(0.0, -float(np.min(mu, initial=0.0))))
    parts.append(np.max(np.abs(mu * slack), initial=0.0))
    return float(max(parts))


def _check_independent_rows(J: np.ndarray) -> None:
    for row in range(J.shape[0]):
        current = J[row]
        norm = np.linalg.norm(current)
        if norm == 0.0:
            raise RankDeficientConstraintError(row)
        if row == 0:
            continue
        basis, _ = np.linalg.qr(J[:row].T)
        remainder = current - basis @ (basis.T @ current)
        if np.linalg.norm(remainder) <= RANK_RTOL * norm:
            raise RankDeficientConstraintError(row)


def solve_kkt_equality(B: np.ndarray, g: np.ndarray, J_E: Optional[np.ndarray] = None,
                       E: Optional[np.ndarray] = None) -> QPResult:
    """Direct symmetric-indefinite solve of the equality-constrained subproblem."""
    B = np.asarray(B, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    n_p = g.shape[0]
    if B.shape != (n_p, n_p):
        raise DimensionMismatchError("B", (n_p, n_p), B.shape)
    J_E = _as_rows(J_E, n_p, "J_E")
    E = _as_values(E, J_E.shape[0], "E")
    cholesky(B, name="B")
    _check_independent_rows(J_E)

    n_e = J_E.shape[0]
    if n_e == 0:
        v = sym_solve(B, -g, assume="spd")
        nu = np.zeros(0)
    else:
        saddle = np.block([[B, J_E.T], [J_E, np.zeros((n_e, n_e))]])
        solution = sym_solve(saddle, np.concatenate([-g, -E]), assume="indefinite")
        v, nu = solution[:n_p], solution[n_p:]
    empty = np.zeros((0, n_p))
    residual = kkt_residual(B, g, J_E, E, empty, np.zeros(0), v, nu, np.zeros(0))
    return QPResult(v=v, nu=nu, mu=np.zeros(0), active_set=[], kkt_residual=residual)


def solve_qp_mixed(B: np.ndarray, g: np.ndarray, J_E: Optional[np.ndarray], E: Optional[np.ndarray],
                   J_C: Optional[np.ndarray], C: Optional[np.ndarray], tol: Optional[float] = None,
                   max_changes: Optional[int] = None) -> QPResult:
    """
    Dual active-set method of Goldfarb-Idnani type.

    Starts at the equality-only minimizer, adds the most violated inequality
    (lowest index on ties) and drops working constraints whose multiplier
    would turn negative. Every intermediate point is the minimizer over its
    working set, so the method terminates for strictly convex B.
    """
    tol = get_settings().qp_tol if tol is None else tol
    B = np.asarray(B, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    n_p = g.shape[0]
    J_E = _as_rows(J_E, n_p, "J_E")
    E = _as_values(E, J_E.shape[0], "E")
    J_C = _as_rows(J_C, n_p, "J_C")
    C = _as_values(C, J_C.shape[0], "C")
    n_e, n_c = J_E.shape[0], J_C.shape[0]

    start = solve_kkt_equality(B, g, J_E, E)
    v = start.v
    if n_c == 0:
        return start

    factor = cholesky(B, name="B")

    def b_inv(x: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((factor, True), x)

    # working set: equalities first (never dropped), then inequality indices
    working: List[int] = []
    u_eq = -start.nu
    u_ineq: List[float] = []
    max_changes = max_changes if max_changes is not None else 10 * (n_p + n_c) + 50
    changes = 0
    add_tol = 0.1 * tol

    def active_normals() -> np.ndarray:
        rows = [J_E] + ([J_C[working]] if working else [])
        return np.vstack(rows) if rows else np.zeros((0, n_p))

    while True:
        slack = J_C @ v + C
        candidates = [l for l in range(n_c) if l not in working and slack[l] < -add_tol]
        if not candidates:
            break
        entering = min(candidates, key=lambda l: (slack[l], l))
        normal = J_C[entering]
        u_plus = 0.0

        while True:
            changes += 1
            if changes > max_changes:
                raise QPCyclingError(changes, working)
            N = active_normals()
            b_inv_n = b_inv(normal)
            if N.shape[0]:
                b_inv_N = b_inv(N.T)
                r = np.linalg.solve(N @ b_inv_N, N @ b_inv_n)
                z = b_inv_n - b_inv_N @ r
            else:
                r = np.zeros(0)
                z = b_inv_n

            r_ineq = r[n_e:]
            blocking = [(u_ineq[j] / r_ineq[j], working[j], j) for j in range(len(working)) if r_ineq[j] > 1e-14]
            t_partial, drop = (min(blocking)[0], min(blocking)[2]) if blocking else (np.inf, None)

            current_slack = float(normal @ v + C[entering])
            curvature = float(z @ normal)
            dependent = np.linalg.norm(z) <= 1e-10 * max(np.linalg.norm(b_inv_n), np.finfo(float).tiny)
            t_full = np.inf if dependent or curvature <= 0.0 else -current_slack / curvature

            t = min(t_partial, t_full)
            if not np.isfinite(t):
                violated = [l for l in range(n_c) if (J_C[l] @ v + C[l]) < -add_tol]
                raise QPInfeasibleError(violated)

            if np.isfinite(t_full):
                v = v + t * z
            u_eq = u_eq - t * r[:n_e]
            u_ineq = [u - t * rj for u, rj in zip(u_ineq, r_ineq)]
            u_plus += t

            if t == t_full:
                working.append(entering)
                u_ineq.append(u_plus)
                break
            working.pop(drop)
            u_ineq.pop(drop)

    mu = np.zeros(n_c)
    for index, value in zip(working, u_ineq):
        mu[index] = max(value, 0.0)
    nu = -u_eq
    residual = kkt_residual(B, g, J_E, E, J_C, C, v, nu, mu)
    logger.debug(f"Mixed QP: working set {sorted(working)}, {changes} changes, kkt residual {residual:.3e}")
    return QPResult(v=v, nu=nu, mu=mu, active_set=sorted(working), kkt_residual=residual)


def regularize(B: np.ndarray, mode: str = "fixed", c: float = 0.0) -> Tuple[np.ndarray, float]:
    """
    B + c I. In auto mode c is the first rung of 0, 1e-8, 1e-6, ..., 1e8 that
    makes B + c I positive definite. Returns the matrix and the shift used.
    """
    B = np.asarray(B, dtype=float)
    identity = np.eye(B.shape[0])
    if mode == "fixed":
        if c < 0.0:
            raise DomainError("c", c, "[0, inf)")
        return B + c * identity, float(c)
    if mode != "auto":
        raise DomainError("mode", mode, "{fixed, auto}")
    for shift in REGULARIZATION_LADDER:
        candidate = B + shift * identity
        if is_positive_definite(candidate):
            if shift:
                logger.info(f"Regularized Hessian approximation with shift {shift:.1e}")
            return candidate, shift
    raise RegularizationError(REGULARIZATION_LADDER[-1])


def limit_step(v: np.ndarray, max_design_update: float) -> Tuple[np.ndarray, float]:
    """Scale v so that ||v||_inf <= bound; returns the step and the scale used."""
    if max_design_update <= 0.0:
        raise DomainError("max_design_update", max_design_update, "(0, inf)")
    v = np.asarray(v, dtype=float)
    norm = float(np.max(np.abs(v), initial=0.0))
    scale = 1.0 if norm <= max_design_update else max_design_update / norm
    return v * scale, scale


def restoration_step(J: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Minimum-norm v with J v + values = 0; the part of a QP step that restores linearized feasibility."""
    J = np.asarray(J, dtype=float)
    if J.shape[0] == 0:
        return np.zeros(J.shape[1])
    return np.linalg.lstsq(J, -np.asarray(values, dtype=float), rcond=None)[0]


def limit_tangential_step(v: np.ndarray, normal: np.ndarray, bound: float) -> Tuple[np.ndarray, float]:
    """
    Keep the restoration part of v and scale only v - normal, as far as
    ||normal + t (v - normal)||_inf <= bound allows. A restoration longer than
    the bound is taken alone. Returns the step and t.
    """
    if bound <= 0.0:
        raise DomainError("max_design_update", bound, "(0, inf)")
    v = np.asarray(v, dtype=float)
    normal = np.asarray(normal, dtype=float)
    if float(np.max(np.abs(v), initial=0.0)) <= bound:
        return v, 1.0
    if float(np.max(np.abs(normal), initial=0.0)) >= bound:
        return normal, 0.0
    tangential = v - normal
    room = np.where(tangential > 0.0, bound - normal, bound + normal)
    moving = np.abs(tangential) > 0.0
    scale = min(1.0, float(np.min(room[moving] / np.abs(tangential[moving]), initial=1.0)))
    return normal + scale * tangential, scale


class IdentityBuilder:
    """B = scale * I."""

    def __init__(self, scale: float = 1.0):
        if scale <= 0.0:
            raise DomainError("scale", scale, "(0, inf)")
        self.scale = scale

    def __call__(self, design: DesignMap, p: np.ndarray) -> np.ndarray:
        return self.scale * np.eye(design.n_params)


class ExactHessianBuilder:
    """Finite-difference reduced Hessian of the objective as B."""

    def __init__(self, problem: ModelProblem, h: float = 1e-4, tol: float = 1e-12,
                 regularization: Optional[str] = None):
        self.problem = problem
        self.h = h
        self.tol = tol
        self.regularization = regularization

    def __call__(self, design: DesignMap, p: np.ndarray) -> np.ndarray:
        from shapeopt.services.hessian import reduced_hessian_fd

        hessian = reduced_hessian_fd(self.problem, design, p, self.h, self.tol).matrix
        if self.regularization == "auto":
            hessian, _ = regularize(hessian, "auto")
        return hessian


def lagrangian_gradient(evaluation: DesignEvaluation, nu: np.ndarray, mu: np.ndarray,
                        use_inequalities: bool = True) -> np.ndarray:
    data = evaluation.constraints
    gradient = evaluation.gradient + data.J_E.T @ nu
    if use_inequalities:
        gradient = gradient - data.J_C.T @ mu
    return gradient


def kkt_error(evaluation: DesignEvaluation, nu: np.ndarray, mu: np.ndarray,
              use_inequalities: bool = True) -> float:
    """max(||grad L||_inf, ||E||_inf, max(0, -C_min))."""
    data = evaluation.constraints
    parts = [
        np.max(np.abs(lagrangian_gradient(evaluation, nu, mu, use_inequalities)), initial=0.0),
        np.max(np.abs(data.E), initial=0.0),
    ]
    if use_inequalities:
        parts.append(max(0.0, -float(np.min(data.C, initial=np.inf))) if data.C.size else 0.0)
    return float(max(parts))


def make_record(iteration: int, evaluation_objective: float, E: np.ndarray, C: Optional[np.ndarray],
                grad_norm: float, step_norm: float, step_scale: float, started: float, sweeps: int,
                nu: Sequence[float], mu: Sequence[float], algorithm: str) -> IterationRecord:
    record = IterationRecord(
        iter=iteration,
        objective=float(evaluation_objective),
        E_max=float(np.max(np.abs(E), initial=0.0)),
        C_min=float(np.min(C)) if C is not None and C.size else None,
        grad_norm=float(grad_norm),
        step_norm=float(step_norm),
        step_scale=float(step_scale),
        time_s=time.perf_counter() - started,
        sweeps=sweeps,
        nu=[float(x) for x in nu],
        mu=[float(x) for x in mu],
    )
    log_iteration(algorithm, iteration, record.objective, record.grad_norm, record.step_norm,
                  record.E_max, record.C_min, record.step_scale)
    return record


def _sqp_loop(algorithm: str, problem: ModelProblem, design: DesignMap, p0: np.ndarray,
              builder: BuilderFn, tol: float, max_iter: int, mixed: bool,
              step_cap: Optional[float] = None, solver_tol: Optional[float] = None,
              qp_tol: Optional[float] = None) -> OptHistory:
    p = np.array(p0, dtype=float)
    if p.shape != (design.n_params,):
        raise DimensionMismatchError("p0", design.n_params, p.shape)
    if tol <= 0.0:
        raise DomainError("tol", tol, "(0, inf)")
    history = OptHistory(algorithm=algorithm)
    n_e = len(problem.equalities)
    n_c = len(problem.inequalities) if mixed else 0
    nu, mu = np.zeros(n_e), np.zeros(n_c)
    step_norm, step_scale = 0.0, 1.0
    evaluation: Optional[DesignEvaluation] = None
    sweeps = 0
    started = time.perf_counter()
    logger.info(f"{algorithm}: starting with {design.n_params} parameters, n_E={n_e}, n_C={n_c}")

    for iteration in range(max_iter + 1):
        try:
            evaluation = evaluate_design(problem, design, p, tol=solver_tol, warm=evaluation)
            sweeps += evaluation.sweeps
            grad_norm = float(np.max(np.abs(lagrangian_gradient(evaluation, nu, mu, mixed)), initial=0.0))
            C = evaluation.constraints.C if mixed else None
            history.append(make_record(
                iteration, evaluation.objective, evaluation.constraints.E, C, grad_norm,
                step_norm, step_scale, started, sweeps, nu, mu, algorithm,
            ))
            if kkt_error(evaluation, nu, mu, mixed) <= tol:
                history.termination = "converged"
                break
            if iteration == max_iter:
                history.termination = "max_iter"
                break

            B = builder(design, p)
            data = evaluation.constraints
            if mixed:
                qp = solve_qp_mixed(B, evaluation.gradient, data.J_E, data.E, data.J_C, data.C, tol=qp_tol)
            else:
                qp = solve_kkt_equality(B, evaluation.gradient, data.J_E, data.E)
        except OptimizationError:
            raise
        except ShapeOptException as e:
            raise OptimizationError(algorithm, iteration, e)

        v = qp.v
        if step_cap is not None:
            active = qp.active_set if mixed else []
            normal = restoration_step(np.vstack([data.J_E, data.J_C[active]]),
                                      np.concatenate([data.E, data.C[active]]))
            v, step_scale = limit_tangential_step(v, normal, step_cap)
        step_norm = float(np.max(np.abs(v), initial=0.0))
        nu, mu = qp.nu, qp.mu
        p = p + v

    history.final_p = p.tolist()
    history.wall_time_s = time.perf_counter() - started
    logger.info(
        f"{algorithm}: {history.termination} after {history.iterations} iterations, "
        f"objective {history.final.objective:.10g}"
    )
    return history


def sqp_equality(problem: ModelProblem, design: DesignMap, p0: np.ndarray, builder: BuilderFn,
                 tol: float = 1e-6, max_iter: int = 100, step_cap: Optional[float] = None,
                 solver_tol: Optional[float] = None) -> OptHistory:
    """Reduced SQP over equality constraints; inequalities of the problem are ignored."""
    return _sqp_loop("sqp_eq", problem, design, p0, builder, tol, max_iter, False, step_cap, solver_tol)


def sqp_mixed(problem: ModelProblem, design: DesignMap, p0: np.ndarray, builder: BuilderFn,
              tol: float = 1e-6, max_iter: int = 100, step_cap: Optional[float] = None,
              solver_tol: Optional[float] = None, qp_tol: Optional[float] = None) -> OptHistory:
    """Reduced SQP with equality and inequality constraints."""
    return _sqp_loop("sqp_mixed", problem, design, p0, builder, tol, max_iter, True, step_cap,
                     solver_tol, qp_tol)


def gradient_descent_projected(problem: ModelProblem, design: DesignMap, p0: np.ndarray, step: float,
                               tol: float = 1e-6, max_iter: int = 1000, step_cap: Optional[float] = None,
                               solver_tol: Optional[float] = None) -> OptHistory:
    """
    Constrained steepest descent: the mixed SQP machinery with B = I / step.
    A step cap shortens the tangential part only, so every iterate keeps the
    full linearized feasibility restoration.
    """
    if step <= 0.0:
        raise DomainError("step", step, "(0, inf)")
    return _sqp_loop("grad_desc", problem, design, p0, IdentityBuilder(1.0 / step), tol, max_iter, True,
                     step_cap, solver_tol)
