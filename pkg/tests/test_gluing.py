import math

import numpy as np
import pytest

from src.core.errors import ConfigError
from src.delaunay.fowler import solve_orbit
from src.geometry.conformal import scalar_curvature_of
from src.geometry.grids import CYLINDER, CYLINDER_PRODUCT, Chart, DiscreteField, MetricDescriptor
from src.gluing.config import GluingConfig, GluingPoint, GridResolution, SummandSpec, chain_config
from src.gluing.cutoffs import neck_cutoffs, ramp, smoothstep
from src.gluing.factor import (
    approximate_factor,
    background_switch,
    error_decay_scan,
    error_field,
    measured_deviation_radius,
    summand_defect,
    summand_factors_on_neck,
    transition_zone_mask,
)
from src.gluing.manifold import ACTIVE, DIRICHLET, FRINGE, HOLE, NECK_OVERHANG, body_to_neck_map, build_connected_sum
from src.gluing.schedule import schedule_search

GRID = GridResolution(end_periods=2.0)


def _summand(n=3, eps=0.4, theta=0.0):
    return SummandSpec(n=n, eps=eps, gluing_point=GluingPoint(0.0, theta))


def dipole(n=3, eps=0.4, T=12.0, grid=GRID):
    return chain_config([_summand(n, eps), _summand(n, eps)], [T], 1.0, grid)


@pytest.fixture(scope="module")
def glued():
    return build_connected_sum(dipole())


@pytest.fixture(scope="module")
def u_T(glued):
    return approximate_factor(glued)


@pytest.fixture(scope="module")
def f_T(glued, u_T):
    return error_field(glued, u_T)


def test_smoothstep_endpoints():
    x = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(smoothstep(x), [0.0, 0.0, 0.5, 1.0, 1.0])
    assert ramp(3.0, 1.0, 2.0) == 1.0


def test_neck_cutoffs_partition_unity():
    s = np.linspace(0.0, 12.0, 121)
    chi_1, chi_2 = neck_cutoffs(s, 6.0, 1.0)
    np.testing.assert_allclose(chi_1 + chi_2, 1.0)
    assert np.all(chi_1[s <= 5.0] == 1.0)
    assert np.all(chi_2[s >= 7.0] == 1.0)


def test_short_neck_rejected():
    with pytest.raises(ConfigError):
        dipole(T=4.0)


def test_neck_count_must_match():
    with pytest.raises(ConfigError):
        chain_config([_summand(), _summand(), _summand()], [12.0])


def test_large_alpha_rejected():
    with pytest.raises(ConfigError):
        SummandSpec(n=3, eps=0.4, gluing_point=GluingPoint(0.0), alpha=0.5)


def test_gluing_point_off_meridian_rejected():
    with pytest.raises(ConfigError):
        GluingPoint(0.0, 1.0)


def test_chain_of_three():
    config = chain_config([_summand(), _summand(eps=0.35), _summand()], [10.0, 12.0], grid=GRID)
    assert len(config.junctions) == 2
    middle = config.summands[1]
    assert len(middle.points) == 2
    assert middle.points[1].sigma == -1.0
    assert config.junctions[0].right_point == 1
    assert config.junctions[1].left == 1


def test_chain_manifold_layout():
    config = chain_config([_summand(), _summand(eps=0.35), _summand()], [10.0, 12.0], grid=GRID)
    glued = build_connected_sum(config)
    assert len(glued.bodies) == 3
    assert len(glued.neck_patches) == 2
    assert len(glued.ends) == 6


def test_manifold_layout(glued):
    assert [p.name for p in glued.patches] == ["body0", "body1", "neck0"]
    assert [e.label for e in glued.ends] == ["0-", "0+", "1-", "1+"]
    assert glued.summary()["designated_ends"] == ["0+", "1+"]
    neck = glued.necks[0]
    lo, hi = glued.neck_patches[0].chart.s_range
    assert hi - lo == pytest.approx(12.0 + 2 * (NECK_OVERHANG + 0.25))
    assert neck.total == pytest.approx(12.0 - 2 * math.log(0.2))


def test_node_status(glued):
    for body in glued.bodies:
        assert np.all(body.status[0, :] == DIRICHLET)
        assert np.all(body.status[-1, :] == DIRICHLET)
        assert np.any(body.status == HOLE)
        assert np.any(body.status == FRINGE)
    neck = glued.neck_patches[0]
    assert np.all(neck.status[0, :] == FRINGE)
    assert np.all(neck.status[-1, :] == FRINGE)
    assert np.all(neck.status[1:-1, :] == ACTIVE)


def test_overlaps_are_isometries(glued):
    assert glued.overlap_isometry_defect() < 1e-10


def test_interpolation_rows_sum_to_weights(glued):
    fringe = glued.status == FRINGE
    rows = np.asarray(glued.interpolation.sum(axis=1)).ravel()
    assert np.all(rows[fringe] > 0)
    assert np.all(rows[~fringe] == 0)


def test_factor_reproduces_summands_on_bodies(glued, u_T):
    assert np.min(u_T.values) > 0
    for body in glued.bodies:
        T, _ = body.chart.mesh()
        expected, _ = glued.orbits[body.index].evaluate(T)
        np.testing.assert_array_equal(u_T.on(body.name).values, expected)


def test_fringe_values_are_consistent(glued, u_T):
    defect = glued.interpolation_defect(u_T.values)
    assert np.max(np.abs(defect)) < 1e-2 * np.max(u_T.values)


def test_error_vanishes_on_bodies(glued, f_T):
    for body in glued.bodies:
        assert np.max(np.abs(f_T.on(body.name).values)) == 0.0


def test_error_supported_in_transition_zone(glued, f_T):
    total = f_T.sup_norm()
    assert total > 0
    outside = np.abs(f_T.values[~transition_zone_mask(glued)])
    assert np.max(outside) <= 1e-8 * total


def test_mirror_symmetry(glued, u_T, f_T):
    neck = glued.neck_patches[0].name
    u = u_T.on(neck).values
    f = f_T.on(neck).values
    np.testing.assert_allclose(u, u[::-1, :], rtol=1e-9)
    np.testing.assert_allclose(f, f[::-1, :], atol=1e-9 * np.max(np.abs(f)))


def test_single_summand_has_no_error():
    config = GluingConfig((_summand(),), (), 1.0, GRID)
    glued = build_connected_sum(config)
    assert len(glued.neck_patches) == 0
    np.testing.assert_array_equal(error_field(glued).values, 0.0)
    assert np.max(np.abs(summand_defect(glued))) > 0


def test_background_switch_is_one_away_from_point():
    config = dipole()
    switch = background_switch(config, 0)
    far = switch.distance >= 2.0 * config.summands[0].alpha
    np.testing.assert_array_equal(switch.factor[far], 1.0)
    assert np.all(switch.factor > 0)
    inner = switch.distance <= config.summands[0].alpha
    np.testing.assert_array_equal(switch.factor[inner & switch.valid], switch.cylinder[inner & switch.valid])


def test_switched_background_is_the_normalized_cylinder_inside_the_ball():
    n = 3
    config = dipole()
    alpha = config.summands[0].alpha
    chart = Chart(CYLINDER, (-0.3, 0.3), (121, 1201), name="ball")
    T, TH = chart.mesh()
    orbit = solve_orbit(n, 0.4)
    switch = background_switch(config, 0, orbit=orbit, coordinates=(T, TH))
    u_eps, _ = orbit.evaluate(T)
    # g_(i,c) = (u_eps / u_i)^(4/(n-2)) g_product
    switched = DiscreteField(chart, u_eps / switch.factor)
    R = scalar_curvature_of(switched, MetricDescriptor(CYLINDER_PRODUCT, n)).values
    band = (switch.distance >= 0.5 * alpha) & (switch.distance <= 0.8 * alpha) & (TH > 0.02) & chart.interior_mask()
    assert np.sum(band) > 100
    np.testing.assert_allclose(R[band], n * (n - 1), rtol=2e-2)


def test_neck_factors_match_direct_transport(glued):
    config = glued.config
    jn = config.junctions[0]
    patch = glued.neck_patches[0]
    S, PSI = patch.chart.mesh()
    (u1, u2), _ = summand_factors_on_neck(glued, 0)
    for side, (i, pi), u in ((0, (jn.left, jn.left_point), u1), (1, (jn.right, jn.right_point), u2)):
        to_body = body_to_neck_map(glued.n, config.summands[i].points[pi], side, glued.necks[0]).inverse()
        t, _ = to_body(S, PSI)
        u_eps, _ = glued.orbits[i].evaluate(t)
        np.testing.assert_allclose(u, u_eps * to_body.weight(S, PSI), rtol=1e-10)


def test_coarse_grid_cannot_resolve_the_overlap():
    coarse = GridResolution(h_body=0.2, n_theta=21, h_neck=0.2, n_psi=21, end_periods=2.0)
    with pytest.raises(ConfigError):
        dipole(grid=coarse)
    assert dipole().grid == GRID


def test_deviation_radius(glued, u_T):
    report = measured_deviation_radius(glued, u_T)
    assert len(report) == 1
    entry = report[0]
    assert entry["sqrt_eps"] == pytest.approx(math.exp(-6.0))
    assert all(r > 0 for r in entry["radius"])
    assert all(np.isfinite(c) for c in entry["c_estimate"])


@pytest.mark.slow
def test_interpolation_converges_second_order():
    coarse = build_connected_sum(dipole())
    fine = build_connected_sum(dipole(grid=GridResolution(h_body=0.05, n_theta=81, h_neck=0.05, n_psi=81,
                                                          end_periods=2.0)))
    errors = []
    for g in (coarse, fine):
        errors.append(np.max(np.abs(g.interpolation_defect(approximate_factor(g).values))))
    assert errors[0] / errors[1] > 3.0


@pytest.mark.slow
def test_error_decay_n4():
    scan = error_decay_scan(dipole(n=4, eps=0.5, T=8.0), [8.0, 10.0, 12.0, 14.0, 16.0])
    assert scan.monotone
    assert scan.rate == pytest.approx(-0.5, abs=0.1)
    assert scan.r2 >= 0.99


@pytest.mark.slow
def test_error_decay_n3():
    scan = error_decay_scan(dipole(T=8.0), [8.0, 10.0, 12.0, 14.0, 16.0])
    assert scan.rate <= -0.25 + 0.05
    assert scan.r2 >= 0.99


@pytest.mark.slow
def test_schedule_search_meets_bounds():
    result = schedule_search([_summand(), _summand(eps=0.35), _summand()], T_start=10.0, grid=GRID)
    assert len(result.neck_parameters) == 2
    for stage in result.stages:
        assert stage.change <= stage.bound
    assert result.to_record()["satisfied"]
