"""
Builds model problem, design map and optimizer from a RunConfig and runs it.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from shapeopt.core.config import get_settings
from shapeopt.core.exceptions import ConfigurationException
from shapeopt.schemas.history import OptHistory, RunSummary
from shapeopt.schemas.run_config import ParameterizationConfig, ProblemConfig, RunConfig
from shapeopt.services.deformation import DesignMap
from shapeopt.services.optim import (
    BuilderFn,
    IdentityBuilder,
    gradient_descent_projected,
    sqp_equality,
    sqp_mixed,
)
from shapeopt.services.oneshot import OneShotConfig, oneshot_constrained, oneshot_multistep
from shapeopt.services.parameterization import (
    FFDParam,
    FreeNodeParam,
    HicksHenneParam,
    NonlinearRadialParam,
    Parameterization,
)
from shapeopt.services.sobolev import HybridOperatorBuilder
from shapeopt.services.state_adjoint import (
    AnnulusBenchmark,
    ConstantSource,
    GaussianSource,
    LinearSource,
    Source,
    solve_state,
)

logger = logging.getLogger(__name__)


def build_source(cfg: ProblemConfig) -> Source:
    if cfg.source == "linear":
        return LinearSource(cfg.source_gradient, cfg.source_offset)
    if cfg.source == "constant":
        return ConstantSource(cfg.source_value)
    return GaussianSource(cfg.source_center, cfg.source_width)


def build_problem(cfg: ProblemConfig) -> AnnulusBenchmark:
    return AnnulusBenchmark(
        n_s=cfg.n_s,
        radius=cfg.radius,
        layers=cfg.layers,
        outer_radius=cfg.outer_radius,
        source=build_source(cfg),
        target=cfg.target,
        gamma=cfg.gamma,
        area_constraint=cfg.area_constraint,
        area_target=cfg.area_target,
        r_min=cfg.r_min,
        laplacian_weight=cfg.laplacian_weight,
        omega=cfg.omega,
        state_weight=cfg.state_weight,
    )


def build_parameterization(cfg: ParameterizationConfig, problem: AnnulusBenchmark) -> Parameterization:
    baseline = problem.baseline
    if cfg.kind == "hicks_henne":
        if cfg.airfoil_preset:
            return HicksHenneParam.airfoil_preset(baseline, cfg.exponent)
        if cfg.peaks is not None:
            return HicksHenneParam(baseline, cfg.peaks, cfg.sides, cfg.exponent)
        return HicksHenneParam.uniform(baseline, cfg.per_side, cfg.exponent)
    if cfg.kind == "ffd":
        return FFDParam.around(baseline, cfg.lattice[0], cfg.lattice[1], cfg.margin, cfg.movable_axis)
    if cfg.kind == "radial":
        return NonlinearRadialParam(baseline, cfg.n_basis, cfg.alpha, basis=cfg.basis)
    return FreeNodeParam(baseline)


def initial_design(cfg: ParameterizationConfig, n_params: int, seed: int,
                   angles: Optional[np.ndarray] = None) -> np.ndarray:
    """Explicit p0, cosine modes over the baseline angles, or zeros plus a seeded random perturbation."""
    if cfg.p0 is not None:
        p0 = np.asarray(cfg.p0, dtype=float)
        if p0.shape != (n_params,):
            raise ConfigurationException("parameterization.p0", f"expected {n_params} values, got {p0.size}")
        return p0
    if cfg.p0_modes is not None:
        if angles is None or angles.shape != (n_params,):
            raise ConfigurationException("parameterization.p0_modes", "needs one baseline angle per parameter")
        p0 = sum((a * np.cos(k * angles) for k, a in cfg.p0_modes.items()), np.zeros(n_params))
    else:
        p0 = np.zeros(n_params)
    if cfg.p0_random_scale:
        p0 += cfg.p0_random_scale * np.random.default_rng(seed).standard_normal(n_params)
    return p0


def build_operator_builder(config: RunConfig) -> BuilderFn:
    if config.optimizer.hessian == "identity":
        return IdentityBuilder(1.0)
    smoothing = config.smoothing
    regularization = None if smoothing.regularization in (None, "none") else smoothing.regularization
    return HybridOperatorBuilder(
        smoothing.eps1, smoothing.eps2, smoothing.eps3,
        formulation=smoothing.formulation,
        identity_as_matrix=smoothing.identity_as_matrix,
        regularization=regularization,
        reassemble=smoothing.reassemble,
    )


def oneshot_config(config: RunConfig) -> OneShotConfig:
    opt, smoothing = config.optimizer, config.smoothing
    return OneShotConfig(
        inner_steps=opt.inner_steps,
        max_design_update=opt.max_design_update,
        outer_iters=opt.max_iter,
        epsilons=(smoothing.eps1, smoothing.eps2, smoothing.eps3),
        formulation=smoothing.formulation,
        identity_as_matrix=smoothing.identity_as_matrix,
        adjoint_carryover=opt.adjoint_carryover,
        inner_tol=opt.inner_tol,
        initial_solve=opt.initial_solve,
        tol=opt.tol,
    )


@dataclass
class Scenario:
    config: RunConfig
    problem: AnnulusBenchmark
    design: DesignMap
    p0: np.ndarray
    builder: BuilderFn


def build_scenario(config: RunConfig) -> Scenario:
    problem = build_problem(config.problem)
    param = build_parameterization(config.parameterization, problem)
    design = problem.design_map(param)
    p0 = initial_design(config.parameterization, design.n_params, config.seed, problem.baseline.reference)
    logger.info(
        f"Scenario '{config.name}': {config.parameterization.kind} with {design.n_params} parameters, "
        f"algorithm {config.optimizer.algorithm}"
    )
    return Scenario(config, problem, design, p0, build_operator_builder(config))


def run_optimizer(scenario: Scenario) -> OptHistory:
    opt = scenario.config.optimizer
    args = (scenario.problem, scenario.design, scenario.p0)
    if opt.algorithm == "sqp_eq":
        return sqp_equality(*args, scenario.builder, opt.tol, opt.max_iter, opt.max_design_update, opt.solver_tol)
    if opt.algorithm == "sqp_mixed":
        return sqp_mixed(*args, scenario.builder, opt.tol, opt.max_iter, opt.max_design_update, opt.solver_tol)
    if opt.algorithm == "grad_desc":
        return gradient_descent_projected(*args, opt.step, opt.tol, opt.max_iter, opt.max_design_update,
                                          opt.solver_tol)
    cfg = oneshot_config(scenario.config)
    if opt.algorithm == "oneshot":
        return oneshot_multistep(*args, cfg, scenario.builder)
    return oneshot_constrained(*args, cfg, scenario.builder)


def single_solve_sweeps(scenario: Scenario, tol: Optional[float] = None) -> int:
    """Updates of one converged state solve at p0, the base of iteration retardation."""
    tol = tol if tol is not None else (scenario.config.optimizer.solver_tol or get_settings().state_tol)
    return solve_state(scenario.problem, scenario.design.mesh(scenario.p0), tol).iterations


@dataclass
class RunResult:
    scenario: Scenario
    history: OptHistory
    summary: RunSummary


def run_scenario(config: RunConfig) -> RunResult:
    scenario = build_scenario(config)
    history = run_optimizer(scenario)
    summary = RunSummary.from_history(config.name, history, config.seed, single_solve_sweeps(scenario))
    return RunResult(scenario, history, summary)
