import math

import numpy as np
import pytest

from src.core.errors import DomainError
from src.delaunay.fowler import solve_orbit, sphere_profile
from src.geometry.conformal import (
    conjugation_defect,
    equivariance_defect,
    laplace_beltrami,
    linearize,
    scalar_curvature_of,
    yamabe_coefficient,
    yamabe_residual,
)
from src.geometry.grids import (
    CYLINDER,
    CYLINDER_NORMALIZED,
    CYLINDER_PRODUCT,
    EUCLIDEAN,
    ROUND_SPHERE,
    SPHERE_POLAR,
    Chart,
    DiscreteField,
    MetricDescriptor,
    check_pair,
    laplacian_matrix,
)
from src.geometry.transport import (
    CylinderReflection,
    CylinderToEuclidean,
    EuclideanToCylinder,
    Recenter,
    cylinder_sphere_transport,
    transport_map,
)

N = 3


@pytest.fixture(scope="module")
def orbit():
    return solve_orbit(N, 0.4)


@pytest.fixture(scope="module")
def charts():
    coarse = Chart(CYLINDER, (-2.0, 2.0), (41, 21), "probe")
    return coarse, coarse.refined()


def _delaunay(chart, orbit):
    return DiscreteField.from_function(chart, lambda s, th: orbit.evaluate(s)[0] + 0.0 * th)


def _probe(chart):
    return DiscreteField.from_function(chart, lambda s, th: (1.0 + 0.3 * np.cos(th)) * np.cos(s))


def _curvature_error(chart, orbit):
    u = _delaunay(chart, orbit)
    R = scalar_curvature_of(u, MetricDescriptor(CYLINDER_PRODUCT, N)).values
    return float(np.max(np.abs(R - N * (N - 1))[chart.interior_mask()]))


def test_descriptor_curvatures():
    assert MetricDescriptor(CYLINDER_PRODUCT, 4).scalar_curvature == 6.0
    assert MetricDescriptor(CYLINDER_NORMALIZED, 4).scalar_curvature == 12.0
    assert MetricDescriptor(CYLINDER_NORMALIZED, 4).scale == pytest.approx(0.5)
    assert MetricDescriptor(EUCLIDEAN, 4).scalar_curvature == 0.0
    assert MetricDescriptor(ROUND_SPHERE, 3).scalar_curvature == 6.0


def test_yamabe_coefficient():
    assert yamabe_coefficient(3) == pytest.approx(1.0 / 8.0)
    assert yamabe_coefficient(4) == pytest.approx(1.0 / 6.0)


def test_chart_validation():
    with pytest.raises(DomainError):
        Chart(SPHERE_POLAR, (0.0, 1.0), (11, 11))
    with pytest.raises(DomainError):
        Chart(CYLINDER, (1.0, 0.0), (11, 11))
    with pytest.raises(DomainError):
        check_pair(Chart(CYLINDER, (0.0, 1.0), (11, 11)), MetricDescriptor(ROUND_SPHERE, 3))


def test_laplacian_kills_constants(charts):
    chart = charts[0]
    matrix = laplacian_matrix(chart, MetricDescriptor(CYLINDER_PRODUCT, N))
    np.testing.assert_allclose(matrix @ np.ones(chart.size), 0.0, atol=1e-10)


def test_first_harmonic_on_sphere():
    errors = []
    for shape in ((51, 31), (101, 61)):
        chart = Chart(SPHERE_POLAR, (0.3, 2.8), shape)
        f = DiscreteField.from_function(chart, lambda s, th: np.cos(s) + 0.0 * th)
        lap = laplace_beltrami(f, MetricDescriptor(ROUND_SPHERE, N)).values
        errors.append(np.max(np.abs(lap + N * f.values)[chart.interior_mask()]))
    assert errors[1] < 1e-2
    assert errors[0] / errors[1] > 3.0


def test_delaunay_curvature_converges(charts, orbit):
    coarse, fine = (_curvature_error(c, orbit) for c in charts)
    assert coarse / fine > 3.0


def test_round_sphere_profile_curvature():
    chart = Chart(CYLINDER, (-1.5, 1.5), (121, 11))
    u = DiscreteField.from_function(chart, lambda s, th: sphere_profile(N, s) + 0.0 * th)
    R = scalar_curvature_of(u, MetricDescriptor(CYLINDER_PRODUCT, N)).values
    assert np.max(np.abs(R - 6.0)[chart.interior_mask()]) < 1e-2


def test_yamabe_residual_requires_positive_factor(charts):
    chart = charts[0]
    u = DiscreteField.from_function(chart, lambda s, th: np.cos(s) + 0.0 * th)
    with pytest.raises(DomainError):
        yamabe_residual(u, MetricDescriptor(CYLINDER_PRODUCT, N), 6.0)


def test_linearization_matches_difference(charts, orbit):
    chart = charts[0]
    desc = MetricDescriptor(CYLINDER_PRODUCT, N)
    u = _delaunay(chart, orbit)
    v = _probe(chart)
    h = 1e-6
    plus = yamabe_residual(u.with_values(u.values + h * v.values), desc, 6.0).values
    minus = yamabe_residual(u.with_values(u.values - h * v.values), desc, 6.0).values
    difference = ((plus - minus) / (2 * h)).ravel()
    exact = linearize(u, desc, 6.0) @ v.flat()
    assert np.max(np.abs(difference - exact)) < 1e-6 * np.max(np.abs(exact))


def test_equivariance_defect_is_second_order(charts, orbit):
    desc = MetricDescriptor(CYLINDER_PRODUCT, N)
    defects = [equivariance_defect(_delaunay(c, orbit), _probe(c), desc) for c in charts]
    assert defects[0] / defects[1] > 3.0


def test_conjugation_defect_is_second_order(charts, orbit):
    desc = MetricDescriptor(CYLINDER_PRODUCT, N)
    defects = [conjugation_defect(_delaunay(c, orbit), _probe(c), desc) for c in charts]
    assert defects[0] / defects[1] > 3.0


def test_cylinder_to_sphere_weight_is_round_profile():
    t = np.linspace(-3.0, 3.0, 25)
    theta = np.full_like(t, 0.7)
    weight = transport_map(N, "cylinder_to_sphere").weight(t, theta)
    np.testing.assert_allclose(weight, sphere_profile(N, t), rtol=1e-12)


def test_transport_round_trip():
    t = np.linspace(-2.0, 2.0, 9)
    theta = np.linspace(0.1, 3.0, 9)
    values = np.exp(-t ** 2)
    s1, th1, v1 = cylinder_sphere_transport(N, "cylinder_to_sphere", t, theta, values)
    s2, th2, v2 = cylinder_sphere_transport(N, "sphere_to_cylinder", s1, th1, v1)
    np.testing.assert_allclose(s2, t, atol=1e-10)
    np.testing.assert_allclose(th2, theta, atol=1e-12)
    np.testing.assert_allclose(v2, values, rtol=1e-10)


def test_composite_neck_map_round_trip(orbit):
    neck = (
        CylinderToEuclidean(N, shift=0.0, orientation=1)
        .then(Recenter(N, 1.0))
        .then(EuclideanToCylinder(N, orientation=-1, scale=(N - 2.0) / N))
        .then(CylinderReflection(N, 14.0))
    )
    t = np.linspace(-0.15, 0.15, 11)
    theta = np.linspace(0.05, 0.3, 11)
    values, _ = orbit.evaluate(t)
    s1, th1, v1 = neck.transport(t, theta, values)
    s2, th2, v2 = neck.inverse().transport(s1, th1, v1)
    np.testing.assert_allclose(s2, t, atol=1e-8)
    np.testing.assert_allclose(th2, theta, atol=1e-8)
    np.testing.assert_allclose(v2, values, rtol=1e-8)


def test_inverse_weights_multiply_to_one():
    maps = [
        CylinderToEuclidean(4, shift=0.5, orientation=1),
        EuclideanToCylinder(4, scale=0.5),
        Recenter(4, -1.0),
        CylinderReflection(4, 7.0),
    ]
    s = np.array([0.3, 0.6, 0.9])
    theta = np.array([0.2, 1.0, 2.5])
    for m in maps:
        s2, th2 = m(s, theta)
        back = m.inverse()
        np.testing.assert_allclose(m.weight(s, theta) * back.weight(s2, th2), 1.0, rtol=1e-12)
        s3, th3 = back(s2, th2)
        np.testing.assert_allclose(s3, s, atol=1e-12)
        np.testing.assert_allclose(th3, theta, atol=1e-12)


def test_cylinder_map_rejects_puncture():
    with pytest.raises(DomainError):
        EuclideanToCylinder(3)(np.array([0.0]), np.array([0.0]))
    with pytest.raises(DomainError):
        transport_map(3, "sideways")


def test_recenter_distance():
    s2, th2 = Recenter(3, 1.0)(np.array([2.0]), np.array([0.0]))
    assert s2[0] == pytest.approx(1.0)
    assert th2[0] == pytest.approx(0.0)
    s3, _ = Recenter(3, 1.0)(np.array([1.0]), np.array([math.pi / 2]))
    assert s3[0] == pytest.approx(math.sqrt(2.0))
