import numpy as np
import pytest
from pydantic import ValidationError

from shapeopt.core.exceptions import DimensionMismatchError, DomainError, PiggybackDivergenceError
from shapeopt.schemas.run_config import build_run_config
from shapeopt.services import oneshot, optim
from shapeopt.services.oneshot import (
    OneShotConfig,
    oneshot_constrained,
    oneshot_multistep,
    piggyback_residuals,
    retardation,
)
from shapeopt.services.optim import IdentityBuilder, sqp_equality
from shapeopt.services.parameterization import HicksHenneParam, NonlinearRadialParam
from shapeopt.services.scenario import build_scenario, run_optimizer
from shapeopt.services.sobolev import HybridOperatorBuilder
from shapeopt.services.state_adjoint import AnnulusBenchmark


@pytest.fixture(scope="module")
def unconstrained():
    problem = AnnulusBenchmark(n_s=8, layers=2, area_constraint=False)
    return problem, problem.design_map(HicksHenneParam.uniform(problem.baseline, 2))


# ---------------------------------------------------------------------------
# retardation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("optimization, expected", [(41280.76, 18.56), (173046.68, 77.81)])
def test_time_retardation(optimization, expected):
    report = retardation(optimization, 2224.1)
    assert round(report.time_factor, 2) == expected
    assert report.iter_factor is None


def test_equal_cost_is_factor_one():
    report = retardation(12.5, 12.5, 300, 300)
    assert report.time_factor == 1.0
    assert report.iter_factor == 1.0


def test_iteration_retardation():
    assert retardation(10.0, 2.0, 4500, 300).iter_factor == pytest.approx(15.0)


@pytest.mark.parametrize("args", [
    (10.0, 0.0),
    (10.0, -1.0),
    (10.0, 2.0, 100, None),
    (10.0, 2.0, 100, 0),
    (10.0, 2.0, None, 50),
])
def test_retardation_rejects_bad_inputs(args):
    with pytest.raises(DomainError):
        retardation(*args)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_limiter_is_shared_with_the_optimizers():
    assert oneshot.limit_step is optim.limit_step


def test_config_defaults():
    cfg = OneShotConfig()
    assert cfg.inner_steps == 10
    assert cfg.max_design_update == 5e-3
    assert cfg.adjoint_carryover


@pytest.mark.parametrize("values", [
    {"epsilons": (0.0, 0.0, 0.0)},
    {"epsilons": (1.0, -0.1, 0.0)},
    {"inner_steps": 0},
    {"max_design_update": 0.0},
    {"divergence_factor": 1.0},
    {"divergence_floor": 0.0},
    {"objective_floor": -1e-3},
])
def test_config_validation(values):
    with pytest.raises(ValidationError):
        OneShotConfig(**values)


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------

def test_multistep_trace_and_limiter(small_problem, small_design):
    cfg = OneShotConfig(inner_steps=4, max_design_update=1e-3, outer_iters=3)
    history = oneshot_multistep(small_problem, small_design, np.zeros(small_design.n_params), cfg)

    assert history.algorithm == "oneshot"
    assert history.termination == "max_iter"
    assert len(history.records) == 4
    assert len(history.piggyback_trace) == 16
    assert all(r.step_norm <= 1e-3 * (1 + 1e-12) for r in history.records)
    assert all(r.C_min is None for r in history.records)

    first = piggyback_residuals(history, 0)
    assert [r.inner_step for r in first] == [0, 1, 2, 3]
    assert piggyback_residuals(history, 7) == []


def test_sweeps_count_primal_and_state_dependent_adjoints(small_problem, small_design):
    cfg = OneShotConfig(inner_steps=3, outer_iters=2)
    history = oneshot_multistep(small_problem, small_design, np.zeros(small_design.n_params), cfg)
    per_step = 1 + sum(1 for f in small_problem.functionals if f.depends_on_state)
    assert history.total_sweeps == len(history.piggyback_trace) * per_step


def test_piggyback_residuals_shrink_within_an_outer_iteration(small_problem, small_design):
    cfg = OneShotConfig(inner_steps=20, outer_iters=0)
    history = oneshot_multistep(small_problem, small_design, np.zeros(small_design.n_params), cfg)
    primal = [r.primal_residual for r in piggyback_residuals(history, 0)]
    assert primal[-1] < primal[0]


def test_inner_tolerance_stops_piggyback_early(small_problem, small_design):
    cfg = OneShotConfig(inner_steps=50, outer_iters=0, initial_solve=True, inner_tol=1e-6)
    history = oneshot_multistep(small_problem, small_design, np.zeros(small_design.n_params), cfg)
    assert len(history.piggyback_trace) == 1


def test_without_carryover_the_adjoint_restarts(small_problem, small_design):
    p0 = np.zeros(small_design.n_params)
    carried = oneshot_multistep(small_problem, small_design, p0, OneShotConfig(inner_steps=3, outer_iters=2))
    reset = oneshot_multistep(small_problem, small_design, p0,
                              OneShotConfig(inner_steps=3, outer_iters=2, adjoint_carryover=False))
    assert piggyback_residuals(carried, 0) == piggyback_residuals(reset, 0)
    assert piggyback_residuals(carried, 1)[0].adjoint_residual != piggyback_residuals(reset, 1)[0].adjoint_residual


def test_converged_piggyback_reproduces_sqp_trajectory(unconstrained):
    problem, design = unconstrained
    p0 = np.zeros(design.n_params)
    builder = HybridOperatorBuilder(1.0, 0.0625, 0.0)
    exact = sqp_equality(problem, design, p0, builder, tol=1e-9, max_iter=3, solver_tol=1e-14)
    cfg = OneShotConfig(inner_steps=2000, inner_tol=1e-14, max_design_update=None, outer_iters=3,
                        tol=1e-9, initial_solve=True, solver_tol=1e-14)
    inexact = oneshot_multistep(problem, design, p0, cfg, HybridOperatorBuilder(1.0, 0.0625, 0.0))

    count = min(len(exact.records), len(inexact.records))
    assert count >= 2
    np.testing.assert_allclose([r.objective for r in inexact.records[:count]],
                               [r.objective for r in exact.records[:count]], atol=1e-8)


def test_constrained_without_constraints_matches_multistep(unconstrained):
    problem, design = unconstrained
    p0 = np.zeros(design.n_params)
    cfg = OneShotConfig(inner_steps=5, outer_iters=3)
    plain = oneshot_multistep(problem, design, p0, cfg)
    constrained = oneshot_constrained(problem, design, p0, cfg)
    assert constrained.algorithm == "oneshot_constrained"
    np.testing.assert_allclose(constrained.final_p, plain.final_p, atol=1e-14)


def test_constrained_records_equality_values(small_problem, small_design):
    cfg = OneShotConfig(inner_steps=5, outer_iters=2)
    history = oneshot_constrained(small_problem, small_design, np.zeros(small_design.n_params), cfg)
    assert len(history.records[0].nu) == len(small_problem.equalities)
    assert all(np.isfinite(r.E_max) for r in history.records)


def test_divergent_piggyback_is_reported():
    problem = AnnulusBenchmark(n_s=8, layers=2, omega=1.0)
    design = problem.design_map(HicksHenneParam.uniform(problem.baseline, 2))
    with pytest.raises(PiggybackDivergenceError) as exc_info:
        oneshot_multistep(problem, design, np.zeros(design.n_params), OneShotConfig(inner_steps=10, outer_iters=5))
    assert exc_info.value.code == "PIGGYBACK_DIVERGENCE"
    assert exc_info.value.details["outer_iteration"] == 0


def test_initial_design_length_is_checked(small_problem, small_design):
    with pytest.raises(DimensionMismatchError):
        oneshot_multistep(small_problem, small_design, np.zeros(small_design.n_params + 2))


def test_unstable_preconditioner_is_reported(small_problem, small_design):
    cfg = OneShotConfig(inner_steps=10, max_design_update=None, outer_iters=30)
    with pytest.raises(PiggybackDivergenceError) as exc_info:
        oneshot_multistep(small_problem, small_design, np.zeros(small_design.n_params), cfg,
                          builder=IdentityBuilder(1e-3))
    error = exc_info.value
    assert error.code == "PIGGYBACK_DIVERGENCE"
    assert error.details["quantity"] in ("objective", "design update")
    assert 1 <= error.details["outer_iteration"] <= 5


def test_divergence_names_the_growing_quantity():
    problem = AnnulusBenchmark(n_s=8, layers=2, omega=1.0)
    design = problem.design_map(HicksHenneParam.uniform(problem.baseline, 2))
    with pytest.raises(PiggybackDivergenceError) as exc_info:
        oneshot_multistep(problem, design, np.zeros(design.n_params), OneShotConfig(inner_steps=10, outer_iters=5))
    assert exc_info.value.details["quantity"] == "residual"
    assert "residual" in exc_info.value.message


def test_limited_unstable_preconditioner_stays_bounded(small_problem, small_design):
    cfg = OneShotConfig(inner_steps=10, max_design_update=1e-3, outer_iters=5)
    history = oneshot_multistep(small_problem, small_design, np.zeros(small_design.n_params), cfg,
                                builder=IdentityBuilder(1e-3))
    assert history.termination == "max_iter"
    assert all(r.step_norm <= 1e-3 * (1 + 1e-12) for r in history.records)


# ---------------------------------------------------------------------------
# benchmark runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def perimeter():
    """Perimeter under an area equality, nodal radial parameters, started from even cosine modes."""
    problem = AnnulusBenchmark(n_s=32, layers=2, gamma=0.1, state_weight=0.0)
    theta = problem.baseline.reference
    design = problem.design_map(NonlinearRadialParam(problem.baseline, basis="nodal"))
    return problem, design, 0.05 * np.cos(2 * theta) + 0.02 * np.cos(4 * theta)


@pytest.mark.slow
def test_halving_the_limiter_slows_but_keeps_the_optimum(perimeter):
    problem, design, p0 = perimeter
    runs = {}
    for bound in (5e-3, 2.5e-3):
        cfg = OneShotConfig(inner_steps=10, max_design_update=bound, outer_iters=400)
        runs[bound] = oneshot_constrained(problem, design, p0, cfg)
        assert runs[bound].termination == "converged"
        assert all(r.step_norm <= bound * (1 + 1e-12) for r in runs[bound].records)
    full, halved = runs[5e-3], runs[2.5e-3]
    assert any(r.step_scale < 1.0 for r in halved.records)
    assert halved.iterations >= full.iterations
    assert abs(halved.final.objective - full.final.objective) <= 1e-5 * abs(full.final.objective)


@pytest.mark.slow
def test_sobolev_needs_no_more_outer_iterations_than_identity(perimeter):
    problem, design, p0 = perimeter
    cfg = OneShotConfig(inner_steps=10, max_design_update=5e-3, outer_iters=200)
    sobolev = oneshot_constrained(problem, design, p0, cfg, HybridOperatorBuilder(1.0, 0.0625, 0.0))
    identity = oneshot_constrained(problem, design, p0, cfg, IdentityBuilder(1.0))
    assert sobolev.termination == "converged"
    assert sobolev.iterations <= identity.iterations


@pytest.mark.slow
def test_constrained_oneshot_reaches_the_sqp_optimum():
    reference = run_optimizer(build_scenario(build_run_config({"preset": "onera-analogue-surface"})))
    scenario = build_scenario(build_run_config({"preset": "onera-analogue-oneshot"}))
    history = run_optimizer(scenario)

    assert reference.termination == "converged"
    assert history.termination == "converged"
    final = history.final
    gap = abs(final.objective - reference.final.objective) / abs(reference.final.objective)
    assert gap <= 1e-5
    assert final.E_max <= 1e-4 * abs(scenario.problem.area_target)
    assert final.C_min >= -1e-6
    assert all(r.step_norm <= 5e-3 * (1 + 1e-12) for r in history.records)
