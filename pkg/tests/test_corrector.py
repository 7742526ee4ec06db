import math

import numpy as np
import pytest
import scipy.sparse as sp

from src.core.errors import AdmissibilityError, DomainError, TrustRegionError
from src.delaunay.fowler import cylinder_constant, solve_orbit
from src.geometry.grids import theta_volumes
from src.gluing.config import GluingPoint, GridResolution, SummandSpec, chain_config
from src.gluing.factor import approximate_factor
from src.gluing.manifold import ACTIVE, DIRICHLET, FRINGE, HOLE, build_connected_sum
from src.corrector.deficiency import (
    TRUST_FRACTION,
    decay_constraints,
    deficiency_basis,
    end_modification,
    parameter_shift,
    translation_shift,
)
from src.corrector.linear import (
    BorderedSystem,
    assemble_linearization,
    deficiency_pairing,
    kernel_diagnostic,
    nondegeneracy_constant_scan,
    random_probes,
    right_inverse_norm_scan,
    second_order_norm,
    solve_bordered,
    weighted_norm,
)
from src.corrector.weights import admissibility_bounds, unchecked_weight, weight

GRID = GridResolution(end_periods=2.0)


def dipole(T=12.0, eps=0.4):
    summands = [SummandSpec(n=3, eps=eps, gluing_point=GluingPoint(0.0)) for _ in range(2)]
    return chain_config(summands, [T], 1.0, GRID)


@pytest.fixture(scope="module")
def glued():
    return build_connected_sum(dipole())


@pytest.fixture(scope="module")
def basis(glued):
    return deficiency_basis(glued)


@pytest.fixture(scope="module")
def operator(glued):
    return assemble_linearization(glued, approximate_factor(glued).values)


def _body_mask(glued, index):
    mask = np.zeros(glued.size, dtype=bool)
    mask[glued.body(index).slice] = True
    return mask


def test_weight_is_one_on_core_and_necks(glued):
    w = weight(glued, 0.5)
    for p in glued.neck_patches:
        np.testing.assert_array_equal(w.values[p.slice], 1.0)
    s, _ = glued.coordinates()
    for end in glued.ends:
        body = _body_mask(glued, end.summand)
        tau = end.end_coordinate(s)
        np.testing.assert_array_equal(w.values[body & (tau <= 0) & _inside_core(glued, s, end.summand)], 1.0)
        assert np.all(w.values[body & (tau > 0.1)] > 1.0)


def _inside_core(glued, s, summand):
    edges = [e.core_edge for e in glued.ends if e.summand == summand]
    return (s >= min(edges)) & (s <= max(edges))


def test_weight_grows_by_delta_per_period(glued):
    delta = 0.5
    w = weight(glued, delta)
    s, _ = glued.coordinates()
    end = next(e for e in glued.ends if e.summand == 0 and e.sign > 0)
    body = _body_mask(glued, 0)
    tau = end.end_coordinate(s)
    far = body & (tau > 1.0)
    expected = np.exp(delta * (np.sqrt(1.0 + tau[far] ** 2) - 1.0))
    np.testing.assert_allclose(w.values[far], expected, rtol=1e-12)


def test_weight_admissibility(glued):
    bounds = admissibility_bounds(glued)
    period = glued.orbits[0].period
    assert [b for _, b in bounds] == pytest.approx([period, period], rel=1e-6)
    with pytest.raises(AdmissibilityError):
        weight(glued, 1.01 * period)
    with pytest.raises(DomainError):
        weight(glued, 0.0)


def test_unchecked_weight_allows_growth_spaces(glued):
    decaying = unchecked_weight(glued, -0.5)
    assert np.all(decaying.values <= 1.0)
    assert decaying.bounds == []
    np.testing.assert_allclose(unchecked_weight(glued, 0.5).values, weight(glued, 0.5).values)


def test_deficiency_basis_layout(glued, basis):
    assert basis.dimension == 4
    assert basis.labels == ["0+:plus", "0+:minus", "1+:plus", "1+:minus"]
    assert basis.fields.shape == (4, glued.size)
    assert basis.degenerate == []
    s, _ = glued.coordinates()
    for k, end in enumerate(basis.ends):
        outside = ~_body_mask(glued, end.summand)
        for row in basis.fields[2 * k:2 * k + 2]:
            np.testing.assert_array_equal(row[outside], 0.0)
            np.testing.assert_array_equal(row[_body_mask(glued, end.summand) & (end.end_coordinate(s) <= 0)], 0.0)


def test_parameter_shift_is_a_bounded_bijection():
    n, eps = 3, 0.4
    room = cylinder_constant(n) - eps
    assert parameter_shift(n, eps, 0.0) == 0.0
    h = 1e-6
    assert (parameter_shift(n, eps, h) - parameter_shift(n, eps, -h)) / (2 * h) == pytest.approx(1.0, rel=1e-6)
    values = [parameter_shift(n, eps, b) for b in np.linspace(-1.0, 1.0, 101)]
    assert np.all(np.diff(values) > 0)
    assert -eps < min(values) and max(values) < room + 1e-12


def test_translation_shift_is_a_bounded_bijection():
    period, amplitude = 6.0, 0.3
    assert translation_shift(period, amplitude, 0.0) == 0.0
    h = 1e-6
    slope = (translation_shift(period, amplitude, h) - translation_shift(period, amplitude, -h)) / (2 * h)
    assert slope == pytest.approx(-1.0 / amplitude, rel=1e-6)
    values = [translation_shift(period, amplitude, a) for a in np.linspace(-1.0, 1.0, 81)]
    assert np.all(np.abs(values) < period / 2.0)


def test_end_modification_at_zero_is_identity(glued, basis):
    base = approximate_factor(glued).values
    modified = end_modification(glued, basis, np.zeros(basis.dimension))
    np.testing.assert_array_equal(modified.values, base)
    assert all(p["shift"] == 0.0 for p in modified.end_parameters.values())


def test_end_modification_rejects_wrong_dimension(glued, basis):
    with pytest.raises(DomainError):
        end_modification(glued, basis, np.zeros(3))


def test_end_modification_trust_region(glued, basis):
    orbit = glued.orbits[0]
    amplitude = float(np.max(np.abs(orbit.up)))
    # tanh(2a / (P amplitude)) above the trust fraction
    a = orbit.period * amplitude * math.atanh(min(2.0 * TRUST_FRACTION, 0.99))
    with pytest.raises(TrustRegionError):
        end_modification(glued, basis, [a, 0.0, 0.0, 0.0])
    with pytest.raises(TrustRegionError):
        end_modification(glued, basis, [0.0, -10.0, 0.0, 0.0])


@pytest.mark.parametrize("index", [0, 1, 3])
def test_end_modification_linearizes_to_basis(glued, basis, index):
    h = 1e-3
    step = np.zeros(basis.dimension)
    step[index] = h
    cache = {}
    plus = end_modification(glued, basis, step, orbit_cache=cache).values
    minus = end_modification(glued, basis, -step, orbit_cache=cache).values
    derivative = (plus - minus) / (2 * h)
    field = basis.fields[index]
    np.testing.assert_allclose(derivative, field, atol=2e-3 * np.max(np.abs(field)))


def test_end_modification_records_new_parameters(glued, basis):
    modified = end_modification(glued, basis, [0.0, 0.01, 0.0, 0.0])
    record = modified.end_parameters["0+"]
    assert record["eps"] == pytest.approx(0.4 + parameter_shift(3, 0.4, 0.01))
    assert modified.end_parameters["1+"]["eps"] == 0.4
    s, _ = glued.coordinates()
    end = basis.ends[0]
    core = _body_mask(glued, 0) & (end.end_coordinate(s) <= 0)
    np.testing.assert_array_equal(modified.defect[core], end_modification(glued, basis, np.zeros(4)).defect[core])


def test_linearization_constraint_rows(glued, operator):
    status = glued.status
    probe = np.random.default_rng(1).standard_normal(glued.size)
    image = operator @ probe
    fixed = (status == DIRICHLET) | (status == HOLE)
    np.testing.assert_allclose(image[fixed], probe[fixed], atol=1e-14)
    fringe = status == FRINGE
    np.testing.assert_allclose(image[fringe], glued.interpolation_defect(probe)[fringe], atol=1e-12)


def test_random_probes_are_supported_on_active_nodes(glued):
    probes = random_probes(glued, 5, np.random.default_rng(0))
    assert len(probes) == 5
    inactive = glued.status != ACTIVE
    for f in probes:
        assert np.max(np.abs(f)) > 0
        np.testing.assert_array_equal(f[inactive], 0.0)


def test_second_order_norm_dominates_l2(glued):
    w = weight(glued, 0.5)
    f = random_probes(glued, 1, np.random.default_rng(3))[0]
    assert second_order_norm(glued, w, f) > weighted_norm(glued, w, f) > 0


def test_bordered_solve_residual(glued, operator, basis):
    w = weight(glued, 0.5)
    system = BorderedSystem(glued, operator, basis, w)
    assert system.dimension == 4
    f = random_probes(glued, 1, np.random.default_rng(7))[0]
    solution = system.solve(f)
    x = np.concatenate([solution.v, solution.coefficients])
    assert np.max(np.abs(system.matrix @ x - f)) <= 1e-10 * max(1.0, np.max(np.abs(f)))
    again = solve_bordered(glued, operator, basis, f, w)
    np.testing.assert_allclose(again.v, solution.v, atol=1e-12)
    np.testing.assert_allclose(again.coefficients, solution.coefficients, atol=1e-12)
    np.testing.assert_allclose(system.constraints @ solution.v, 0.0, atol=1e-10)


def test_decay_rows_sit_next_to_undesignated_truncations(glued):
    matrix, labels = decay_constraints(glued)
    assert labels == ["0-", "1-"]
    assert matrix.shape == (2, glued.size)
    np.testing.assert_allclose(np.asarray(matrix.sum(axis=1)).ravel(), 1.0)
    for row, index in zip(matrix, (0, 1)):
        body = glued.body(index)
        nt = body.chart.shape[1]
        start = body.slice.start + nt
        np.testing.assert_array_equal(np.sort(row.indices), np.arange(start, start + nt))


def test_bordered_solution_has_least_weighted_norm(glued, operator, basis):
    w = weight(glued, 0.5)
    system = BorderedSystem(glued, operator, basis, w)
    rng = np.random.default_rng(11)
    y = np.concatenate([random_probes(glued, 1, rng)[0], rng.standard_normal(system.dimension)])
    f = system.matrix @ y
    solution = system.solve(f, rows=system.constraints @ y[:glued.size])
    x = np.concatenate([solution.v, solution.coefficients])
    k = y - x
    norm_x = math.sqrt(np.sum(x * x / system.scaling))
    norm_k = math.sqrt(np.sum(k * k / system.scaling))
    assert solution.residual <= 1e-10 * max(1.0, np.max(np.abs(f)))
    assert abs(system.weighted_pairing(solution, k)) <= 1e-8 * norm_x * max(norm_k, 1.0)
    assert norm_x <= math.sqrt(np.sum(y * y / system.scaling)) * (1.0 + 1e-10)


def test_zonal_correction_vanishes_along_undesignated_ends(glued, operator, basis):
    system = BorderedSystem(glued, operator, basis, weight(glued, 0.5))
    body = glued.body(0)
    T, TH = body.chart.mesh()
    source = np.where((np.abs(T) < 0.5) & (body.status == ACTIVE), np.exp(-4.0 * T ** 2) * (1.0 + np.cos(TH)), 0.0)
    arrays = {p.name: np.zeros(p.chart.shape) for p in glued.patches}
    arrays[body.name] = source
    solution = system.solve(glued.join(arrays))
    theta = theta_volumes(glued.n, body.chart.theta)
    for index in (0, 1):
        part = glued.body(index)
        values = solution.v[part.slice].reshape(part.chart.shape)
        zonal = values @ theta / np.sum(theta)
        end = next(e for e in glued.ends if e.summand == index and e.sign < 0)
        past = end.end_coordinate(part.chart.s) > 0.0
        assert np.max(np.abs(values)) > 0
        assert np.max(np.abs(zonal[past])) <= 1e-7 * np.max(np.abs(solution.v))


def test_kernel_diagnostic_finds_small_singular_value():
    values = np.concatenate([[1e-12], np.arange(1.0, 30.0)])
    operator = sp.diags(values)
    report = kernel_diagnostic(operator, window=1e-6, k=4)
    assert report.count == 1
    assert report.singular_values[0] < 1e-7
    assert report.singular_values[1] == pytest.approx(1.0, rel=1e-8)
    assert np.argmax(np.abs(report.vectors[0])) == 0
    multiplicities = np.ones(values.size, dtype=int)
    multiplicities[0] = 3
    assert kernel_diagnostic(operator, window=1e-6, k=4, multiplicities=multiplicities).full_count == 3


def test_deficiency_pairing(glued, operator, basis):
    empty = deficiency_pairing(glued, np.zeros((0, glued.size)), basis, operator)
    assert empty.nondegenerate
    active = glued.status == ACTIVE
    image = np.where(active, operator @ basis.fields[0], 0.0)
    report = deficiency_pairing(glued, image, basis, operator)
    assert report.matrix.shape == (1, 4)
    assert report.smallest >= 1.0 - 1e-12
    assert report.nondegenerate


@pytest.mark.slow
def test_right_inverse_norm_scan():
    scan = right_inverse_norm_scan(dipole(), [8.0, 12.0, 16.0], 0.5, probes=4)
    assert scan.T == [8.0, 12.0, 16.0]
    assert all(np.isfinite(v) and v > 0 for v in scan.norms)
    assert scan.plateau_ratio == pytest.approx(scan.norms[-1] / scan.norms[0])
    assert scan.to_record()["delta"] == 0.5
    assert scan.plateau_ratio <= 1.5
    assert scan.plateau


@pytest.mark.slow
def test_nondegeneracy_constant_scan():
    result = nondegeneracy_constant_scan(dipole(), [8.0, 12.0], 0.5, probes=4)
    assert len(result["constants"]) == 2
    assert all(np.isfinite(c) and c > 0 for c in result["constants"])
    assert result["spread"] <= 0.5
    assert result["stable"]


def test_deficiency_basis_on_cylindrical_end():
    eps = cylinder_constant(3)
    orbit = solve_orbit(3, eps)
    assert orbit.degenerate
    summands = [SummandSpec(n=3, eps=e, gluing_point=GluingPoint(0.0)) for e in (0.4, eps)]
    cylinder = build_connected_sum(chain_config(summands, [12.0], 1.0, GRID))
    basis = deficiency_basis(cylinder)
    assert basis.degenerate == ["1+"]
    assert basis.dimension == 4
