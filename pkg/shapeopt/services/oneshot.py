"""
Multistep One Shot: J piggyback steps per design update, inexact reduced
gradients from the shifted Lagrangian, B-preconditioned (or QP) steps with a
design-update limiter, and retardation accounting.
"""

import logging
import time
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from shapeopt.core.exceptions import (
    DimensionMismatchError,
    DomainError,
    OptimizationError,
    PiggybackDivergenceError,
    ShapeOptException,
)
from shapeopt.schemas.history import OptHistory, PiggybackRecord
from shapeopt.services.deformation import DesignMap
from shapeopt.services.optim import (
    BuilderFn,
    limit_step,
    make_record,
    solve_kkt_equality,
    solve_qp_mixed,
)
from shapeopt.services.sobolev import SURFACE, HybridOperatorBuilder
from shapeopt.services.state_adjoint import (
    ModelProblem,
    PiggybackState,
    piggyback_step,
    shifted_lagrangian_dm,
    solve_adjoint,
    solve_state,
)

logger = logging.getLogger(__name__)

__all__ = [
    "OneShotConfig",
    "RetardationReport",
    "limit_step",
    "oneshot_constrained",
    "oneshot_multistep",
    "retardation",
]


class OneShotConfig(BaseModel):
    """Knobs of the One Shot loops."""
    inner_steps: int = Field(10, ge=1, description="Piggyback steps J per outer iteration")
    max_design_update: Optional[float] = Field(5e-3, gt=0.0, description="Infinity-norm bound on each design update")
    outer_iters: int = Field(200, ge=0, description="Outer iteration cap I")
    epsilons: Tuple[float, float, float] = Field((1.0, 0.0625, 0.0), description="(eps1, eps2, eps3) of B")
    formulation: str = Field(SURFACE, description="surface or volume form of B")
    identity_as_matrix: bool = False
    adjoint_carryover: bool = Field(True, description="Keep adjoints across design updates instead of resetting")
    inner_tol: Optional[float] = Field(None, gt=0.0, description="Stop piggyback early once both residuals are below")
    initial_solve: bool = Field(False, description="Converge state and adjoints at p0 before the first update")
    divergence_factor: float = Field(10.0, gt=1.0, description="Growth of residual or objective flagged as divergence")
    divergence_floor: float = Field(1e-8, gt=0.0,
                                    description="Residuals below this fraction of the state scale are not compared")
    objective_floor: float = Field(1e-3, gt=0.0,
                                   description="Objectives below this fraction of the largest seen are not compared")
    tol: float = Field(1e-6, gt=0.0, description="KKT tolerance on the inexact reduced quantities")
    solver_tol: float = Field(1e-12, gt=0.0, description="Tolerance of the initial solve")

    @field_validator("epsilons")
    @classmethod
    def _check_epsilons(cls, value):
        if any(e < 0.0 for e in value) or not any(value):
            raise ValueError("epsilons must be non-negative and not all zero")
        return value


class RetardationReport(BaseModel):
    """Optimization cost relative to one converged state solve."""
    time_optimization: float
    time_single_solve: float
    time_factor: float
    iter_optimization: Optional[float] = None
    iter_single_solve: Optional[float] = None
    iter_factor: Optional[float] = None


def retardation(time_optimization: float, time_single_solve: float,
                iter_optimization: Optional[float] = None,
                iter_single_solve: Optional[float] = None) -> RetardationReport:
    """Time and iteration retardation factors."""
    if time_single_solve <= 0.0:
        raise DomainError("time_single_solve", time_single_solve, "(0, inf)")
    iter_factor = None
    if iter_optimization is not None or iter_single_solve is not None:
        if iter_single_solve is None or iter_single_solve <= 0:
            raise DomainError("iter_single_solve", iter_single_solve, "(0, inf)")
        if iter_optimization is None:
            raise DomainError("iter_optimization", None, "[0, inf)")
        iter_factor = float(iter_optimization) / float(iter_single_solve)
    return RetardationReport(
        time_optimization=time_optimization,
        time_single_solve=time_single_solve,
        time_factor=time_optimization / time_single_solve,
        iter_optimization=iter_optimization,
        iter_single_solve=iter_single_solve,
        iter_factor=iter_factor,
    )


def _converged_state(problem: ModelProblem, m: np.ndarray, tol: float) -> Tuple[PiggybackState, int]:
    state = solve_state(problem, m, tol)
    adjoints = [solve_adjoint(problem, state, m, f, tol) for f in problem.functionals]
    n_e = len(problem.equalities)
    sweeps = state.iterations + sum(a.iterations for a in adjoints)
    return PiggybackState(
        u=state.solution,
        lambda_F=adjoints[0].solution,
        lambda_E=[a.solution for a in adjoints[1:1 + n_e]],
        lambda_C=[a.solution for a in adjoints[1 + n_e:]],
        primal_residual=state.residual,
        adjoint_residual=max(a.residual for a in adjoints),
    ), sweeps


def _state_dependent_count(problem: ModelProblem) -> int:
    return sum(1 for f in problem.functionals if f.depends_on_state)


def _check_objective(outer: int, objective: float, gradient: np.ndarray, previous: Optional[float],
                     largest: float, cfg: OneShotConfig) -> None:
    """Non-finite values or a jump of the objective by more than divergence_factor mean the design diverged."""
    start = float("nan") if previous is None else previous
    if not np.isfinite(objective) or not np.all(np.isfinite(gradient)):
        raise PiggybackDivergenceError(outer, start, float(objective), cfg.divergence_factor, "objective")
    if previous is None:
        return
    reference = max(abs(previous), cfg.objective_floor * largest)
    if abs(objective) > cfg.divergence_factor * reference:
        raise PiggybackDivergenceError(outer, previous, objective, cfg.divergence_factor, "objective")


def _oneshot_loop(algorithm: str, problem: ModelProblem, design: DesignMap, p0: np.ndarray,
                  cfg: OneShotConfig, constrained: bool, builder: Optional[BuilderFn]) -> OptHistory:
    p = np.array(p0, dtype=float)
    if p.shape != (design.n_params,):
        raise DimensionMismatchError("p0", design.n_params, p.shape)
    if builder is None:
        eps1, eps2, eps3 = cfg.epsilons
        builder = HybridOperatorBuilder(eps1, eps2, eps3, cfg.formulation, cfg.identity_as_matrix)

    history = OptHistory(algorithm=algorithm)
    n_e = len(problem.equalities) if constrained else 0
    n_c = len(problem.inequalities) if constrained else 0
    nu, mu = np.zeros(n_e), np.zeros(n_c)
    step_norm, step_scale = 0.0, 1.0
    sweeps_per_step = 1 + _state_dependent_count(problem)
    started = time.perf_counter()

    if cfg.initial_solve:
        state, sweeps = _converged_state(problem, design.mesh(p), cfg.solver_tol)
    else:
        state, sweeps = PiggybackState.zeros(problem), 0
    residual_scale = 0.0
    previous_objective: Optional[float] = None
    largest_objective = 0.0

    logger.info(f"{algorithm}: J={cfg.inner_steps}, limiter={cfg.max_design_update}, n_E={n_e}, n_C={n_c}")
    for outer in range(cfg.outer_iters + 1):
        try:
            m = design.mesh(p)
            if not cfg.adjoint_carryover and outer > 0:
                state = state.with_adjoints_reset()

            state_scale = float(np.max(np.abs(state.u), initial=0.0))
            first_residual = None
            for inner in range(cfg.inner_steps):
                state = piggyback_step(problem, state, m)
                sweeps += sweeps_per_step
                residual = max(state.primal_residual, state.adjoint_residual)
                history.piggyback_trace.append(PiggybackRecord(
                    outer_iter=outer, inner_step=inner,
                    primal_residual=state.primal_residual, adjoint_residual=state.adjoint_residual,
                ))
                if first_residual is None:
                    first_residual = residual
                if cfg.inner_tol is not None and residual <= cfg.inner_tol:
                    break

            end_residual = max(state.primal_residual, state.adjoint_residual)
            if not np.isfinite(end_residual):
                raise PiggybackDivergenceError(outer, float(first_residual), float(end_residual),
                                               cfg.divergence_factor)
            residual_scale = max(residual_scale, first_residual, state_scale)
            reference = max(first_residual, cfg.divergence_floor * residual_scale)
            if end_residual > cfg.divergence_factor * reference:
                raise PiggybackDivergenceError(outer, float(first_residual), float(end_residual),
                                               cfg.divergence_factor)

            adjoints = state.adjoints(problem)
            gradient = design.vjp(p, shifted_lagrangian_dm(problem, state.u, state.lambda_F, m, problem.objective))
            if constrained:
                rows_E = [design.vjp(p, shifted_lagrangian_dm(problem, state.u, adjoints[f.name], m, f))
                          for f in problem.equalities]
                rows_C = [design.vjp(p, shifted_lagrangian_dm(problem, state.u, adjoints[f.name], m, f))
                          for f in problem.inequalities]
                E = np.array([f.value(state.u, m) for f in problem.equalities])
                C = np.array([f.value(state.u, m) for f in problem.inequalities])
            else:
                rows_E, rows_C, E, C = [], [], np.zeros(0), np.zeros(0)
            J_E = np.array(rows_E).reshape(n_e, design.n_params)
            J_C = np.array(rows_C).reshape(n_c, design.n_params)

            lagrangian = gradient + J_E.T @ nu - J_C.T @ mu
            objective = problem.objective.value(state.u, m)
            _check_objective(outer, objective, lagrangian, previous_objective, largest_objective, cfg)
            previous_objective = objective
            largest_objective = max(largest_objective, abs(objective))
            grad_norm = float(np.max(np.abs(lagrangian), initial=0.0))
            history.append(make_record(
                outer, objective, E, C if constrained else None, grad_norm,
                step_norm, step_scale, started, sweeps, nu, mu, algorithm,
            ))

            error = max(grad_norm, float(np.max(np.abs(E), initial=0.0)),
                        max(0.0, -float(np.min(C, initial=0.0))))
            if error <= cfg.tol and end_residual <= cfg.tol:
                history.termination = "converged"
                break
            if outer == cfg.outer_iters:
                history.termination = "max_iter"
                break

            B = builder(design, p)
            if constrained:
                qp = solve_qp_mixed(B, gradient, J_E, E, J_C, C)
            else:
                qp = solve_kkt_equality(B, gradient)
        except (OptimizationError, PiggybackDivergenceError):
            raise
        except ShapeOptException as e:
            raise OptimizationError(algorithm, outer, e)

        v = qp.v
        if not np.all(np.isfinite(v)):
            raise PiggybackDivergenceError(outer, step_norm, float("inf"), cfg.divergence_factor, "design update")
        if cfg.max_design_update is not None:
            v, step_scale = limit_step(v, cfg.max_design_update)
        step_norm = float(np.max(np.abs(v), initial=0.0))
        nu, mu = qp.nu, qp.mu
        p = p + v

    history.final_p = p.tolist()
    history.wall_time_s = time.perf_counter() - started
    logger.info(
        f"{algorithm}: {history.termination} after {history.iterations} outer iterations, "
        f"{history.total_sweeps} sweeps, objective {history.final.objective:.10g}"
    )
    return history


def oneshot_multistep(problem: ModelProblem, design: DesignMap, p0: np.ndarray,
                      cfg: Optional[OneShotConfig] = None,
                      builder: Optional[BuilderFn] = None) -> OptHistory:
    """Unconstrained One Shot: B v = -delta_p after J piggyback steps."""
    return _oneshot_loop("oneshot", problem, design, p0, cfg or OneShotConfig(), False, builder)


def oneshot_constrained(problem: ModelProblem, design: DesignMap, p0: np.ndarray,
                        cfg: Optional[OneShotConfig] = None,
                        builder: Optional[BuilderFn] = None) -> OptHistory:
    """One Shot with a mixed QP step over inexact constraint Jacobians."""
    return _oneshot_loop("oneshot_constrained", problem, design, p0, cfg or OneShotConfig(), True, builder)


def piggyback_residuals(history: OptHistory, outer_iter: int) -> List[PiggybackRecord]:
    return [r for r in history.piggyback_trace if r.outer_iter == outer_iter]
