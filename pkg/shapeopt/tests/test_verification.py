"""
Acceptance suites. The gradient, hessian and refinement levels solve many
state and adjoint problems to tight tolerances and are marked slow.
"""

import numpy as np
import pytest

from shapeopt.core.exceptions import InvalidParameterError
from shapeopt.services.verification import (
    LEVELS,
    default_benchmark,
    hessian_checks,
    operator_checks,
    refinement_checks,
    run_verification,
    small_benchmark,
)


def test_levels():
    assert LEVELS == ("gradient", "hessian", "operators", "refinement", "all")


def test_unknown_level():
    with pytest.raises(InvalidParameterError):
        run_verification("everything")


def test_benchmarks():
    assert default_benchmark().n_surface == 32
    small = small_benchmark(gamma=1.0)
    assert small.n_surface == 8


def test_operator_checks_pass(rng):
    results = operator_checks(rng)
    assert [r.check_id for r in results] == [
        "operators.stiffness_row_sums",
        "operators.mass_equals_perimeter",
        "operators.sobolev_identity",
        "operators.fourier_amplification",
        "operators.hybrid_spd",
        "operators.volume_mass_ratio",
    ]
    failed = [(r.check_id, r.measured) for r in results if not r.passed]
    assert failed == []


def test_seed_comes_from_settings(settings_env):
    settings_env(verify_seed=99)
    assert run_verification("operators").seed == 99


def test_same_seed_same_report():
    first = run_verification("operators", seed=5)
    second = run_verification("operators", seed=5)
    assert first.to_text() == second.to_text()


@pytest.mark.slow
def test_hessian_checks_pass():
    results = hessian_checks(np.random.default_rng(1234))
    ids = {r.check_id for r in results}
    assert "hessian.perimeter_oracle" in ids
    assert "hessian.term2_zero.hicks_henne" in ids
    assert "hessian.term2_zero.radial" not in ids
    assert all(r.passed for r in results), [r.check_id for r in results if not r.passed]


@pytest.mark.slow
def test_gradient_level_passes():
    report = run_verification("gradient", seed=1234)
    assert report.passed, report.to_text()
    assert len(report.checks) == 3


@pytest.mark.slow
def test_refinement_level_passes():
    results = refinement_checks()
    assert [r.check_id for r in results] == [
        "refinement.sobolev_converged",
        "refinement.sobolev_growth",
        "refinement.sobolev_vs_descent",
        "refinement.descent_growth",
    ]
    assert all(r.passed for r in results), [(r.check_id, r.measured, r.detail) for r in results]
