#!/usr/bin/env python3
# Yamabe operator, its linearization and conformal covariance checks

import numpy as np
import scipy.sparse as sp

from src.core.errors import DomainError
from src.geometry.grids import DiscreteField, check_pair, gradient_dot, laplacian_matrix


def yamabe_coefficient(n):
    """(n-2)/(4(n-1)); the denominator n-2 printed in some sources is a typo"""
    return (n - 2.0) / (4.0 * (n - 1.0))


def _require_positive(u):
    values = u.values if isinstance(u, DiscreteField) else np.asarray(u)
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise DomainError("conformal factor must be finite and positive")


def laplace_beltrami(field, descriptor, matrix=None):
    check_pair(field.chart, descriptor)
    if matrix is None:
        matrix = laplacian_matrix(field.chart, descriptor)
    return field.with_values((matrix @ field.flat()).reshape(field.chart.shape))


def conformal_laplacian(field, descriptor, matrix=None):
    """L_g f = Delta f - c_n R(g) f"""
    lap = laplace_beltrami(field, descriptor, matrix)
    c = yamabe_coefficient(descriptor.n)
    return lap.with_values(lap.values - c * descriptor.scalar_curvature * field.values)


def yamabe_residual(u, descriptor, target_R, matrix=None):
    _require_positive(u)
    n = descriptor.n
    c = yamabe_coefficient(n)
    p = (n + 2.0) / (n - 2.0)
    lap = laplace_beltrami(u, descriptor, matrix).values
    values = lap - c * descriptor.scalar_curvature * u.values + c * target_R * u.values ** p
    return u.with_values(values)


def linearize(u, descriptor, target_R, matrix=None):
    """Sparse matrix of v -> Delta v - c_n R0 v + p c_n R u^(4/(n-2)) v"""
    _require_positive(u)
    n = descriptor.n
    c = yamabe_coefficient(n)
    if matrix is None:
        matrix = laplacian_matrix(u.chart, descriptor)
    potential = -c * descriptor.scalar_curvature + c * (n + 2.0) / (n - 2.0) * target_R * u.values ** (4.0 / (n - 2.0))
    return (matrix + sp.diags(potential.ravel())).tocsr()


def scalar_curvature_of(u, descriptor, matrix=None):
    """Scalar curvature of u^(4/(n-2)) g recovered from the Yamabe equation"""
    _require_positive(u)
    n = descriptor.n
    c = yamabe_coefficient(n)
    lap = laplace_beltrami(u, descriptor, matrix).values
    values = (-lap + c * descriptor.scalar_curvature * u.values) * u.values ** (-(n + 2.0) / (n - 2.0)) / c
    return u.with_values(values)


def _conformal_laplacian_of_rescaled(u, phi, descriptor, curvature, matrix):
    """Delta_g' phi - c_n R' phi for g' = u^(4/(n-2)) g, evaluated in g coordinates"""
    n = descriptor.n
    lap_phi = (matrix @ phi.flat()).reshape(phi.chart.shape)
    cross = gradient_dot(u.chart, descriptor, u.values, phi.values)
    lap_prime = u.values ** (-4.0 / (n - 2.0)) * (lap_phi + 2.0 * cross / u.values)
    return lap_prime - yamabe_coefficient(n) * curvature * phi.values


def _defect(u, phi, descriptor, curvature, shift):
    _require_positive(u)
    n = descriptor.n
    p = (n + 2.0) / (n - 2.0)
    matrix = laplacian_matrix(u.chart, descriptor)
    left = conformal_laplacian(u.with_values(u.values * phi.values), descriptor, matrix).values
    right = _conformal_laplacian_of_rescaled(u, phi, descriptor, curvature, matrix)
    if shift:
        left = left + shift * u.values ** (4.0 / (n - 2.0)) * u.values * phi.values
        right = right + shift * phi.values
    diff = left - u.values ** p * right
    mask = _interior(u.chart)
    return float(np.max(np.abs(diff[mask])))


def _interior(chart):
    # drop the s ends and the nodes next to them, where one-sided data enters the gradient
    mask = chart.interior_mask()
    mask[1, :] = False
    mask[-2, :] = False
    return mask


def equivariance_defect(u, phi, descriptor):
    """Sup norm of L_g(u phi) - u^p L_g'(phi) with R(g') from the recovered curvature"""
    _require_positive(u)
    curvature = scalar_curvature_of(u, descriptor).values
    return _defect(u, phi, descriptor, curvature, 0.0)


def conjugation_defect(u, phi, descriptor):
    """Sup norm of L_g(u phi) - u^p L_g'(phi) for the linearizations at u and at 1.

    Meaningful when u carries g to another metric of curvature n(n-1).
    """
    n = descriptor.n
    target = float(n * (n - 1))
    shift = yamabe_coefficient(n) * (n + 2.0) / (n - 2.0) * target
    return _defect(u, phi, descriptor, target, shift)
