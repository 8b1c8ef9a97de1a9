"""
Oracle suites behind `shapeopt verify`: finite differences against adjoint
gradients, the chain-rule Hessian against FD Hessians, identities of the
smoothing operators, and iteration counts of the perimeter benchmark under
mesh refinement.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from shapeopt.core.config import get_settings
from shapeopt.core.exceptions import InvalidParameterError, ShapeOptException
from shapeopt.core.logging import log_check
from shapeopt.schemas.history import OptHistory
from shapeopt.schemas.report import CheckResult, VerificationReport
from shapeopt.schemas.run_config import build_run_config
from shapeopt.services.deformation import DesignMap, build_volume
from shapeopt.services.geometry import perimeter, perimeter_hessian, unit_circle_surface
from shapeopt.services.hessian import hessian_report, mesh_covector, mesh_level_hessian_fd
from shapeopt.services.linalg_support import generalized_eigen, is_positive_definite
from shapeopt.services.parameterization import FFDParam, HicksHenneParam, NonlinearRadialParam
from shapeopt.services.scenario import build_scenario, run_optimizer
from shapeopt.services.sobolev import (
    assemble_hybrid_operator,
    assemble_surface_operators,
    assemble_volume_operators,
    smooth_surface_field,
)
from shapeopt.services.state_adjoint import (
    AnnulusBenchmark,
    constraint_values_and_jacobians,
    reduced_gradient,
    reduced_objective,
    solve_adjoint,
    solve_state,
)

logger = logging.getLogger(__name__)

LEVELS = ("gradient", "hessian", "operators", "refinement", "all")
REFINEMENT_SIZES = (32, 64)


def _check(check_id: str, measured: float, tolerance: float, detail: str = "") -> CheckResult:
    passed = bool(np.isfinite(measured) and measured <= tolerance)
    log_check(check_id, passed, float(measured), tolerance)
    return CheckResult(check_id=check_id, passed=passed, measured=float(measured), tolerance=tolerance, detail=detail)


def _guarded(check_id: str, tolerance: float, body: Callable[[], CheckResult]) -> CheckResult:
    try:
        return body()
    except ShapeOptException as e:
        logger.error(f"Check {check_id} raised {e.code}: {e.message}")
        return _check(check_id, float("inf"), tolerance, detail=f"{e.code}: {e.message}")


def default_benchmark() -> AnnulusBenchmark:
    """n_s = 32, L = 4 annulus."""
    return AnnulusBenchmark(n_s=32, layers=4)


def small_benchmark(**kwargs) -> AnnulusBenchmark:
    """n_s = 8, L = 2 annulus for brute-force Hessians."""
    return AnnulusBenchmark(n_s=8, layers=2, **kwargs)


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------

def gradient_checks(rng: np.random.Generator, pairs: int = 20) -> List[CheckResult]:
    settings = get_settings()
    h, tol = settings.fd_step, settings.verify_state_tol
    problem = default_benchmark()
    design = problem.design_map(HicksHenneParam.uniform(problem.baseline, 6))
    n_p = design.n_params

    def directional() -> CheckResult:
        worst = 0.0
        for _ in range(pairs):
            p = 0.02 * rng.standard_normal(n_p)
            dp = rng.standard_normal(n_p)
            dp /= np.linalg.norm(dp)
            m = design.mesh(p)
            state = solve_state(problem, m, tol)
            adjoint = solve_adjoint(problem, state, m, problem.objective, tol)
            g = reduced_gradient(problem, design, p, state, adjoint, problem.objective, m)
            fd = (reduced_objective(problem, design, p + h * dp, tol)
                  - reduced_objective(problem, design, p - h * dp, tol)) / (2.0 * h)
            worst = max(worst, abs(g @ dp - fd) / max(1.0, abs(fd)))
        return _check("gradient.fd_directional", worst, 1e-6, f"{pairs} random (p, dp) pairs, h={h}")

    def componentwise() -> CheckResult:
        p = 0.02 * rng.standard_normal(n_p)
        m = design.mesh(p)
        state = solve_state(problem, m, tol)
        adjoint = solve_adjoint(problem, state, m, problem.objective, tol)
        g = reduced_gradient(problem, design, p, state, adjoint, problem.objective, m)
        worst = 0.0
        for j in range(n_p):
            e = np.zeros(n_p)
            e[j] = h
            fd = (reduced_objective(problem, design, p + e, tol) - reduced_objective(problem, design, p - e, tol)) / (2 * h)
            worst = max(worst, abs(g[j] - fd) / max(1.0, abs(g[j])))
        return _check("gradient.fd_componentwise", worst, 1e-6, f"n_p={n_p}")

    def constraint_rows() -> CheckResult:
        p = 0.02 * rng.standard_normal(n_p)
        state = solve_state(problem, design.mesh(p), tol)
        data = constraint_values_and_jacobians(problem, design, p, state)
        worst = 0.0
        for k, functional in enumerate(problem.equalities):
            for j in range(n_p):
                e = np.zeros(n_p)
                e[j] = h
                fd = (reduced_objective(problem, design, p + e, tol, functional=functional)
                      - reduced_objective(problem, design, p - e, tol, functional=functional)) / (2 * h)
                worst = max(worst, abs(data.J_E[k, j] - fd) / max(1.0, abs(fd)))
        return _check("gradient.constraint_rows", worst, 1e-6, f"n_E={len(problem.equalities)}")

    return [
        _guarded("gradient.fd_directional", 1e-6, directional),
        _guarded("gradient.fd_componentwise", 1e-6, componentwise),
        _guarded("gradient.constraint_rows", 1e-6, constraint_rows),
    ]


# ---------------------------------------------------------------------------
# hessian
# ---------------------------------------------------------------------------

def hessian_checks(rng: np.random.Generator) -> List[CheckResult]:
    problem = small_benchmark()
    baseline = problem.baseline
    cases: Dict[str, DesignMap] = {
        "hicks_henne": problem.design_map(HicksHenneParam.uniform(baseline, 2)),
        "ffd": problem.design_map(FFDParam.around(baseline, 3, 2)),
        "radial": problem.design_map(NonlinearRadialParam(baseline, 5, alpha=0.5)),
    }
    results: List[CheckResult] = []
    for name, design in cases.items():
        p = 0.05 * rng.standard_normal(design.n_params)

        def agreement(design=design, p=p, name=name) -> CheckResult:
            report = hessian_report(problem, design, p, h=1e-4, tol=1e-12)
            return _check(f"hessian.faa_di_bruno.{name}", report.relative_error, 1e-3, report.to_text().replace("\n", "; "))

        results.append(_guarded(f"hessian.faa_di_bruno.{name}", 1e-3, agreement))
        if design.is_linear:
            def term2_zero(design=design, p=p, name=name) -> CheckResult:
                m = design.mesh(p)
                term2 = design.second_derivative_contraction(p, mesh_covector(problem, m))
                return _check(f"hessian.term2_zero.{name}", float(np.max(np.abs(term2))), 0.0,
                              "second-derivative term of a linear map")

            results.append(_guarded(f"hessian.term2_zero.{name}", 0.0, term2_zero))

    def perimeter_oracle() -> CheckResult:
        perimeter_only = small_benchmark(gamma=1.0, state_weight=0.0, area_constraint=False)
        m = perimeter_only.volume.coordinates
        H_mm = mesh_level_hessian_fd(perimeter_only, m, h=1e-4).matrix
        n = 2 * perimeter_only.n_surface
        analytic = perimeter_hessian(perimeter_only.baseline.nodes)
        return _check("hessian.perimeter_oracle", float(np.max(np.abs(H_mm[:n, :n] - analytic))), 1e-6)

    results.append(_guarded("hessian.perimeter_oracle", 1e-6, perimeter_oracle))
    return results


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def operator_checks(rng: np.random.Generator) -> List[CheckResult]:
    results: List[CheckResult] = []
    eps1, eps2 = 1.0, 0.0625

    def row_sums() -> CheckResult:
        worst = 0.0
        for n in (8, 32):
            ops = assemble_surface_operators(unit_circle_surface(n))
            worst = max(worst, float(np.max(np.abs(ops.stiffness.toarray().sum(axis=1)))))
        return _check("operators.stiffness_row_sums", worst, 1e-12)

    def mass_total() -> CheckResult:
        worst = 0.0
        for n in (8, 32):
            surface = unit_circle_surface(n)
            ops = assemble_surface_operators(surface)
            worst = max(worst, abs(float(ops.mass.toarray().sum()) - perimeter(surface)))
        return _check("operators.mass_equals_perimeter", worst, 1e-12)

    def sobolev_identity() -> CheckResult:
        ops = assemble_surface_operators(unit_circle_surface(32))
        f = rng.standard_normal(32)
        v = rng.standard_normal(32)
        g = smooth_surface_field(ops, f, eps1, eps2)
        system = ops.system(eps1, eps2)
        pairing = abs(float(v @ (system @ g)) - float(v @ (ops.mass @ f)))
        residual = float(np.max(np.abs(system @ g - ops.mass @ f)))
        return _check("operators.sobolev_identity", max(pairing, residual), 1e-10)

    def amplification() -> CheckResult:
        n = 64
        surface = unit_circle_surface(n)
        ops = assemble_surface_operators(surface)
        values, _ = generalized_eigen(ops.stiffness.toarray(), ops.mass.toarray())
        theta = surface.reference
        worst = 0.0
        for k in range(1, n // 2):
            mode = np.cos(k * theta)
            g = smooth_surface_field(ops, mode, eps1, eps2)
            measured = float(g @ mode) / float(mode @ mode)
            expected = 1.0 / (eps1 + eps2 * values[2 * k - 1])
            worst = max(worst, abs(measured - expected))
        return _check("operators.fourier_amplification", worst, 1e-8, f"n={n}, modes 1..{n // 2 - 1}")

    def hybrid_spd() -> CheckResult:
        problem = default_benchmark()
        design = problem.design_map(HicksHenneParam.uniform(problem.baseline, 6))
        operator = assemble_hybrid_operator(design, np.zeros(design.n_params), None, 56.9, 0.9, 0.1)
        if not is_positive_definite(operator.B):
            return _check("operators.hybrid_spd", float("inf"), 1e-12, "hybrid operator not positive definite")
        return _check("operators.hybrid_spd", operator.symmetry_defect, 1e-12, "eps = (56.9, 0.9, 0.1)")

    def volume_mass() -> CheckResult:
        inner, outer = 1.0, 3.0
        volume, _ = build_volume(unit_circle_surface(64, inner), 8, outer)
        ops = assemble_volume_operators(volume)
        ratio = float(ops.mass.toarray().sum()) / (np.pi * (outer ** 2 - inner ** 2))
        return _check("operators.volume_mass_ratio", abs(ratio - 1.0), 0.02, f"64 x 8 mesh, ratio {ratio:.6f}")

    for check_id, tolerance, body in [
        ("operators.stiffness_row_sums", 1e-12, row_sums),
        ("operators.mass_equals_perimeter", 1e-12, mass_total),
        ("operators.sobolev_identity", 1e-10, sobolev_identity),
        ("operators.fourier_amplification", 1e-8, amplification),
        ("operators.hybrid_spd", 1e-12, hybrid_spd),
        ("operators.volume_mass_ratio", 0.02, volume_mass),
    ]:
        results.append(_guarded(check_id, tolerance, body))
    return results


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def refinement_study(sizes: Sequence[int] = REFINEMENT_SIZES) -> Dict[str, Dict[int, OptHistory]]:
    """Sobolev SQP and projected descent on the perimeter benchmark at each n_s."""
    study: Dict[str, Dict[int, OptHistory]] = {}
    for preset in ("perimeter-sobolev", "perimeter-descent"):
        study[preset] = {}
        for n_s in sizes:
            config = build_run_config({"preset": preset, "name": f"{preset}-{n_s}", "problem": {"n_s": n_s}})
            history = run_optimizer(build_scenario(config))
            logger.info(f"Refinement {preset} n_s={n_s}: {history.termination} after {history.iterations} iterations")
            study[preset][n_s] = history
    return study


def refinement_checks(sizes: Sequence[int] = REFINEMENT_SIZES) -> List[CheckResult]:
    tolerances = {
        "refinement.sobolev_converged": 0.0,
        "refinement.sobolev_growth": 2.0,
        "refinement.sobolev_vs_descent": 0.5,
        "refinement.descent_growth": 0.8,
    }
    try:
        study = refinement_study(sizes)
    except ShapeOptException as e:
        logger.error(f"Refinement study raised {e.code}: {e.message}")
        return [_check(check_id, float("inf"), tolerance, detail=f"{e.code}: {e.message}")
                for check_id, tolerance in tolerances.items()]

    sobolev, descent = study["perimeter-sobolev"], study["perimeter-descent"]
    coarse, fine = min(sizes), max(sizes)
    counts = ", ".join(
        f"n_s={n}: sobolev {sobolev[n].iterations} ({sobolev[n].termination}), "
        f"descent {descent[n].iterations} ({descent[n].termination})"
        for n in sizes
    )
    unconverged = sum(1 for h in sobolev.values() if h.termination != "converged")
    return [
        _check("refinement.sobolev_converged", float(unconverged), tolerances["refinement.sobolev_converged"],
               counts),
        _check("refinement.sobolev_growth", float(sobolev[fine].iterations - sobolev[coarse].iterations),
               tolerances["refinement.sobolev_growth"], f"extra iterations from n_s={coarse} to n_s={fine}"),
        _check("refinement.sobolev_vs_descent",
               max(sobolev[n].iterations / max(descent[n].iterations, 1) for n in sizes),
               tolerances["refinement.sobolev_vs_descent"], "iteration ratio, worst mesh"),
        _check("refinement.descent_growth", descent[coarse].iterations / max(descent[fine].iterations, 1),
               tolerances["refinement.descent_growth"], f"n_s={coarse} over n_s={fine} iterations"),
    ]


def run_verification(level: str, seed: Optional[int] = None) -> VerificationReport:
    """Run the suites selected by level and collect their checks."""
    if level not in LEVELS:
        raise InvalidParameterError("level", f"expected one of {', '.join(LEVELS)}")
    seed = get_settings().verify_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    report = VerificationReport(level=level, seed=seed)
    if level in ("gradient", "all"):
        report.checks.extend(gradient_checks(rng))
    if level in ("hessian", "all"):
        report.checks.extend(hessian_checks(rng))
    if level in ("operators", "all"):
        report.checks.extend(operator_checks(rng))
    if level in ("refinement", "all"):
        report.checks.extend(refinement_checks())
    logger.info(f"Verification '{level}': {len(report.checks) - len(report.failures)}/{len(report.checks)} passed")
    return report
