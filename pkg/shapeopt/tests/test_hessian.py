import numpy as np
import pytest

from shapeopt.core.exceptions import DimensionMismatchError, DomainError, SizeGuardError
from shapeopt.services.geometry import perimeter_hessian
from shapeopt.services.hessian import (
    faa_di_bruno_assemble,
    hessian_report,
    mesh_covector,
    mesh_level_hessian_fd,
    reduced_hessian_fd,
)
from shapeopt.services.parameterization import FreeNodeParam, HicksHenneParam, NonlinearRadialParam
from shapeopt.services.state_adjoint import AnnulusBenchmark, ConstantSource, LinearSource, reduced_objective


@pytest.fixture(scope="module")
def perimeter_only():
    return AnnulusBenchmark(n_s=8, layers=2, gamma=1.0, state_weight=0.0, area_constraint=False)


@pytest.fixture(scope="module")
def perimeter_H_mm(perimeter_only):
    return mesh_level_hessian_fd(perimeter_only, perimeter_only.volume.coordinates, h=1e-4).matrix


def test_quadratic_composite_has_constant_hessian(rng):
    problem = AnnulusBenchmark(n_s=8, layers=2, laplacian_weight=0.0, gamma=0.0, source=LinearSource())
    design = problem.design_map(HicksHenneParam.uniform(problem.baseline, 2))
    at_zero = reduced_hessian_fd(problem, design, np.zeros(4)).matrix
    elsewhere = reduced_hessian_fd(problem, design, 0.1 * rng.standard_normal(4)).matrix
    np.testing.assert_allclose(at_zero, elsewhere, atol=1e-6)


def test_single_parameter_matches_value_differences(small_problem):
    design = small_problem.design_map(NonlinearRadialParam(small_problem.baseline, 1, alpha=0.5))
    p = np.array([0.05])
    H = reduced_hessian_fd(small_problem, design, p, h=1e-4).matrix[0, 0]
    h = 1e-3
    values = [reduced_objective(small_problem, design, p + s * h, 1e-13) for s in (-1.0, 0.0, 1.0)]
    second = (values[0] - 2.0 * values[1] + values[2]) / h ** 2
    assert H == pytest.approx(second, rel=1e-4, abs=1e-6)


def test_fd_hessian_symmetry_defect(small_problem, small_design):
    result = reduced_hessian_fd(small_problem, small_design, np.zeros(small_design.n_params), h=1e-4)
    assert result.symmetry_defect <= 1e-5
    np.testing.assert_array_equal(result.matrix, result.matrix.T)


def test_fd_step_must_be_positive(small_problem, small_design):
    with pytest.raises(DomainError):
        reduced_hessian_fd(small_problem, small_design, np.zeros(small_design.n_params), h=0.0)


def test_perimeter_mesh_hessian_is_analytic(perimeter_only, perimeter_H_mm):
    n = 2 * perimeter_only.n_surface
    analytic = perimeter_hessian(perimeter_only.baseline.nodes)
    np.testing.assert_allclose(perimeter_H_mm[:n, :n], analytic, atol=1e-6)
    np.testing.assert_allclose(perimeter_H_mm[n:, :], 0.0, atol=1e-12)


def test_perimeter_mesh_hessian_ignores_translations(perimeter_H_mm):
    for axis in range(2):
        translation = np.zeros(perimeter_H_mm.shape[0])
        translation[axis::2] = 1.0
        np.testing.assert_allclose(perimeter_H_mm @ translation, 0.0, atol=1e-6)


def test_decoupled_state_has_zero_mesh_hessian():
    problem = AnnulusBenchmark(n_s=8, layers=2, source=ConstantSource(1.0), gamma=0.0)
    assert not np.any(mesh_covector(problem, problem.volume.coordinates))
    H = mesh_level_hessian_fd(problem, problem.volume.coordinates).matrix
    assert not np.any(H)


def test_mesh_hessian_size_guard(small_problem):
    with pytest.raises(SizeGuardError):
        mesh_level_hessian_fd(small_problem, np.zeros(402))


def test_linear_map_has_no_second_term(small_design, rng):
    n_m = small_design.deformer.volume_size
    H_mm = rng.standard_normal((n_m, n_m))
    result = faa_di_bruno_assemble(small_design, np.zeros(small_design.n_params), H_mm, rng.standard_normal(n_m))
    assert not np.any(result.term2)
    np.testing.assert_array_equal(result.matrix, result.term1)


def test_free_nodes_on_single_layer_pick_surface_block(rng):
    problem = AnnulusBenchmark(n_s=8, layers=1)
    design = problem.design_map(FreeNodeParam(problem.baseline))
    n_m = design.deformer.volume_size
    H_mm = rng.standard_normal((n_m, n_m))
    result = faa_di_bruno_assemble(design, np.zeros(16), H_mm, np.zeros(n_m))
    np.testing.assert_allclose(result.matrix, H_mm[:16, :16])


def test_faa_di_bruno_checks_shapes(small_design):
    with pytest.raises(DimensionMismatchError):
        faa_di_bruno_assemble(small_design, np.zeros(small_design.n_params), np.eye(3), np.zeros(3))


def test_chain_rule_matches_fd_for_nonlinear_map(small_problem, rng):
    design = small_problem.design_map(NonlinearRadialParam(small_problem.baseline, 5, alpha=0.5))
    report = hessian_report(small_problem, design, 0.05 * rng.standard_normal(5), h=1e-4)
    assert report.term2_norm > 0.0
    assert report.relative_error <= 1e-3
    assert "relative_error" in report.to_text()
