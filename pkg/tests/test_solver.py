import numpy as np
import pytest

from src.core.errors import DomainError
from src.delaunay.fowler import cylinder_constant
from src.gluing.config import GluingConfig, GluingPoint, GridResolution, SummandSpec, chain_config
from src.gluing.manifold import build_connected_sum
from src.corrector.solver import (
    NEWTON,
    SolverConfig,
    certify,
    contraction_solve,
    end_parameter_estimate,
    estimate_all_ends,
    final_kernel_count,
    truncation_sensitivity,
)

GRID = GridResolution(end_periods=2.0)


def single(eps=0.4, n=3):
    summand = SummandSpec(n=n, eps=eps, gluing_point=GluingPoint(0.0))
    return GluingConfig((summand,), (), 1.0, GRID)


def dipole(T=12.0, eps=0.4):
    summands = [SummandSpec(n=3, eps=eps, gluing_point=GluingPoint(0.0)) for _ in range(2)]
    return chain_config(summands, [T], 1.0, GRID)


@pytest.fixture(scope="module")
def single_report():
    return contraction_solve(build_connected_sum(single()))


def test_solver_config_validation():
    with pytest.raises(DomainError):
        SolverConfig(residual_target=0.0)
    with pytest.raises(DomainError):
        SolverConfig(max_iterations=0)
    with pytest.raises(DomainError):
        SolverConfig(mode="gradient")


def test_unglued_summand_is_a_fixed_point(single_report):
    assert single_report.converged
    assert len(single_report.iterations) == 1
    assert single_report.iterations[0]["iteration"] == 0
    np.testing.assert_array_equal(single_report.v, 0.0)
    assert single_report.coefficients == [0.0, 0.0]
    assert single_report.curvature_defect == pytest.approx(single_report.reference_defect, rel=1e-9, abs=1e-12)


def test_report_record(single_report):
    record = single_report.to_record()
    assert record["converged"] is True
    assert record["iterations"] == 1
    assert set(record["coefficients"]) == {"0+:plus", "0+:minus"}
    assert record["correction_sup"] == 0.0
    assert record["solver"]["delta"] == 0.5


def test_end_estimates_recover_parameter(single_report):
    for label in ("0+", "0-"):
        estimate = end_parameter_estimate(single_report, label)
        assert not estimate.cylindrical
        assert estimate.prescribed == 0.4
        assert estimate.eps == pytest.approx(0.4, abs=1e-5)
    rough = end_parameter_estimate(single_report, "0+", fit=False)
    assert rough.eps == pytest.approx(0.4, abs=2e-2)
    assert set(estimate_all_ends(single_report)) == {"0-", "0+"}


def test_unknown_end_rejected(single_report):
    with pytest.raises(DomainError):
        end_parameter_estimate(single_report, "3+")


def test_cylindrical_end_detected():
    u_bar = cylinder_constant(3)
    report = contraction_solve(build_connected_sum(single(eps=u_bar)))
    assert report.converged
    assert report.degenerate_ends == ["0+"]
    estimate = end_parameter_estimate(report, "0+")
    assert estimate.cylindrical
    assert estimate.eps == pytest.approx(u_bar, rel=1e-9)


def test_certify_rejects_nonpositive_factor():
    glued = build_connected_sum(single())
    assert certify(glued, -np.ones(glued.size)) == float("inf")


@pytest.fixture(scope="module")
def dipole_report():
    glued = build_connected_sum(dipole())
    return contraction_solve(glued, SolverConfig(residual_target=1e-8, max_iterations=40))


def _settled_ratios(report):
    return [e["ratio"] for e in report.iterations if e["iteration"] > 2 and np.isfinite(e["ratio"])]


@pytest.mark.slow
def test_dipole_converges(dipole_report):
    assert dipole_report.converged
    assert dipole_report.residual <= 1e-8
    assert len(dipole_report.iterations) > 1
    assert dipole_report.contraction_estimate < 1.0
    assert all(r <= 0.5 for r in _settled_ratios(dipole_report))
    assert np.all(dipole_report.factor[dipole_report.manifold.status == 0] > 0)
    assert dipole_report.curvature_defect <= 10.0 * dipole_report.reference_defect


@pytest.mark.slow
def test_dipole_keeps_undesignated_end_parameters(dipole_report):
    for label in ("0-", "1-"):
        estimate = end_parameter_estimate(dipole_report, label)
        assert estimate.prescribed == 0.4
        assert estimate.eps == pytest.approx(0.4, abs=1e-6)


@pytest.mark.slow
def test_newton_mode_converges():
    glued = build_connected_sum(dipole())
    newton = contraction_solve(glued, SolverConfig(mode=NEWTON, residual_target=1e-8))
    fixed = contraction_solve(glued, SolverConfig(residual_target=1e-8, max_iterations=40))
    assert newton.converged
    assert len(newton.iterations) <= len(fixed.iterations)
    assert newton.residual <= 1e-8


@pytest.mark.slow
def test_final_kernel_count(dipole_report):
    kernel = final_kernel_count(dipole_report)
    assert kernel.count == 0
    assert kernel.scale > 0
    assert len(kernel.singular_values) > 0
    assert kernel.to_record()["window"] == 1e-6


@pytest.mark.slow
def test_truncation_sensitivity():
    result = truncation_sensitivity(dipole(), SolverConfig(residual_target=1e-8, max_iterations=40))
    assert result["end_periods"] == [2.0, 4.0]
    assert all(np.isfinite(d) for d in result["curvature_defect"])
    assert result["relative_change"] <= 0.2
    assert result["accepted"]


@pytest.mark.slow
def test_chain_of_three_solves():
    summands = [SummandSpec(n=3, eps=e, gluing_point=GluingPoint(0.0)) for e in (0.4, 0.35, 0.4)]
    glued = build_connected_sum(chain_config(summands, [12.0, 12.0], 1.0, GRID))
    report = contraction_solve(glued, SolverConfig(residual_target=1e-8, max_iterations=40))
    assert report.converged
    assert report.residual <= 1e-8
    assert len(report.coefficients) == 6
    assert report.curvature_defect <= 10.0 * report.reference_defect
    for index, eps in enumerate((0.4, 0.35, 0.4)):
        assert end_parameter_estimate(report, f"{index}-").eps == pytest.approx(eps, abs=1e-6)
