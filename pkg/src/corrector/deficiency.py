#!/usr/bin/env python3
# Deficiency space W on designated ends and the end modification it linearizes

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from src.core.errors import DomainError, TrustRegionError
from src.delaunay.fowler import cylinder_constant, solve_orbit
from src.delaunay.modeline import jacobi_translation, parameter_field_extension
from src.geometry.conformal import yamabe_residual
from src.geometry.grids import DiscreteField, theta_volumes
from src.gluing.cutoffs import ramp
from src.gluing.factor import approximate_factor, summand_defect
from src.gluing.manifold import ACTIVE

logger = logging.getLogger(__name__)

TRUST_FRACTION = 0.25


@dataclass(eq=False)
class DeficiencyBasis:
    """Two fields chi phi_0^+, chi phi_0^- per designated end, as global vectors"""
    ends: list
    labels: list
    fields: np.ndarray = field(repr=False)
    cutoffs: dict = field(default_factory=dict, repr=False)
    degenerate: list = field(default_factory=list)
    collar: float = 1.0

    @property
    def dimension(self):
        return len(self.labels)

    def combine(self, coefficients):
        if self.dimension == 0:
            return 0.0
        return self.fields.T @ np.asarray(coefficients, dtype=float)


def end_cutoff(end, t, collar):
    """0 on the core, 1 beyond core_edge + collar along the end"""
    return ramp(end.sign * (np.asarray(t, dtype=float) - end.core_edge), 0.0, collar)


def _profiles(orbit, t):
    """(phi_0^+, phi_0^-) at t; at eps = u_bar the two bounded constant-coefficient modes"""
    if orbit.degenerate:
        w = math.sqrt(orbit.n - 2.0)
        return np.sin(w * t), np.cos(w * t)
    plus = jacobi_translation(orbit, t).phi
    minus = parameter_field_extension(orbit, t)
    return plus, minus


def deficiency_basis(glued, collar=1.0):
    ends = [e for e in glued.ends if e.designated]
    fields, labels, cutoffs, degenerate = [], [], {}, []
    for end in ends:
        body = glued.body(end.summand)
        orbit = glued.orbits[end.summand]
        T, _ = body.chart.mesh()
        chi = end_cutoff(end, T, collar)
        plus, minus = _profiles(orbit, T)
        cutoffs[end.label] = chi
        if orbit.degenerate:
            degenerate.append(end.label)
            logger.warning(f"End {end.label} is cylindrical; parameter direction replaced by the bounded mode")
        for name, profile in (("plus", plus), ("minus", minus)):
            arrays = {p.name: np.zeros(p.chart.shape) for p in glued.patches}
            arrays[body.name] = chi * profile
            fields.append(glued.join(arrays))
            labels.append(f"{end.label}:{name}")
    matrix = np.array(fields) if fields else np.zeros((0, glued.size))
    return DeficiencyBasis(ends, labels, matrix, cutoffs, degenerate, collar)


def decay_constraints(glued):
    """Rows fixing the theta-average of a correction to zero next to each undesignated truncation.

    With the Dirichlet row this kills the zonal mode along the whole end, the
    discrete form of decay on an end that carries no deficiency fields.
    Summands without a designated end are left to the Dirichlet rows alone.
    """
    owners = {e.summand for e in glued.ends if e.designated}
    rows, cols, vals, labels = [], [], [], []
    for end in glued.ends:
        if end.designated or end.summand not in owners:
            continue
        body = glued.body(end.summand)
        ns, nt = body.chart.shape
        row = 1 if end.sign < 0 else ns - 2
        weights = theta_volumes(glued.n, body.chart.theta)
        start = body.slice.start + row * nt
        rows.extend([len(labels)] * nt)
        cols.extend(range(start, start + nt))
        vals.extend(weights / np.sum(weights))
        labels.append(end.label)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), glued.size))
    return matrix, labels


def parameter_shift(n, eps, b):
    """d_eps(b): monotone smooth bijection R -> (-eps, u_bar - eps) with d(0) = 0, d'(0) = 1"""
    room = cylinder_constant(n) - eps
    if b >= 0:
        return room * math.tanh(b / room) if room > 1e-14 else 0.0
    return eps * math.tanh(b / eps)


def translation_shift(period, amplitude, a):
    """tau_eps(a): monotone smooth bijection R -> (-P/2, P/2) with d/da u(t - tau(a)) = phi_0^+ at 0"""
    return -0.5 * period * math.tanh(2.0 * a / (period * amplitude))


@dataclass(eq=False)
class ModifiedFactor:
    values: np.ndarray = field(repr=False)
    defect: np.ndarray = field(repr=False)
    end_parameters: dict = field(default_factory=dict)


def check_trust_region(n, orbit, a, b):
    tau = translation_shift(orbit.period, float(np.max(np.abs(orbit.up))) or 1.0, a)
    d = parameter_shift(n, orbit.eps, b)
    room = cylinder_constant(n) - orbit.eps
    if abs(tau) > TRUST_FRACTION * orbit.period / 2.0:
        raise TrustRegionError(f"translation coefficient a={a} moves the end by {tau:.4f}, beyond the trust region")
    if d > TRUST_FRACTION * room + 1e-15 or -d > TRUST_FRACTION * orbit.eps:
        raise TrustRegionError(f"parameter coefficient b={b} shifts eps by {d:.4e}, beyond the trust region")
    return tau, d


def end_modification(glued, basis, coefficients, base=None, defect=None, orbit_cache=None):
    """Replace each designated end past its cutoff by a translated Delaunay factor of shifted parameter.

    base/defect are the global factor and summand discretization defect it
    modifies (u_T and its defect by default). Cylindrical ends are modified
    linearly along their basis fields.
    """
    n = glued.n
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.size != basis.dimension:
        raise DomainError(f"expected {basis.dimension} deficiency coefficients, got {coefficients.size}")
    values = np.array(approximate_factor(glued).values if base is None else base, dtype=float)
    defect = np.array(summand_defect(glued) if defect is None else defect, dtype=float)
    orbit_cache = {} if orbit_cache is None else orbit_cache
    parameters = {}
    for k, end in enumerate(basis.ends):
        a, b = coefficients[2 * k], coefficients[2 * k + 1]
        orbit = glued.orbits[end.summand]
        body = glued.body(end.summand)
        chi = basis.cutoffs[end.label].ravel()
        T, _ = body.chart.mesh()
        t = T.ravel()
        block = values[body.slice]
        if orbit.degenerate:
            block += a * basis.fields[2 * k][body.slice] + b * basis.fields[2 * k + 1][body.slice]
            parameters[end.label] = {"eps": orbit.eps, "shift": 0.0, "linear": True}
            continue
        if a == 0.0 and b == 0.0:
            parameters[end.label] = {"eps": orbit.eps, "shift": 0.0, "linear": False}
            continue
        tau, d = check_trust_region(n, orbit, a, b)
        eps_new = orbit.eps + d
        key = round(eps_new, 15)
        if d == 0.0:
            shifted = orbit
        else:
            if key not in orbit_cache:
                orbit_cache[key] = solve_orbit(n, eps_new)
            shifted = orbit_cache[key]
        u_old, _ = orbit.evaluate(t)
        u_new, _ = shifted.evaluate(t - tau)
        block[:] = (1.0 - chi) * u_old + chi * u_new
        active = body.status.ravel() == ACTIVE
        change = _body_defect(glued, body, u_new) - _body_defect(glued, body, u_old)
        defect[body.slice] += np.where(active, chi * change, 0.0)
        parameters[end.label] = {"eps": eps_new, "shift": tau, "linear": False}
    return ModifiedFactor(values, defect, parameters)


def _body_defect(glued, body, profile):
    n = glued.n
    field_ = DiscreteField(body.chart, profile.reshape(body.chart.shape))
    return yamabe_residual(field_, body.descriptor, float(n * (n - 1)), body.matrix).values.ravel()
