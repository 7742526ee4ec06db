#!/usr/bin/env python3
# Mode-by-mode analysis of the linearized Yamabe operator on Delaunay cylinders

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq
from scipy.special import comb

from src.core.errors import DomainError, NumericalError
from src.delaunay.fowler import (
    cylinder_constant,
    integrate_with_orbit,
    period_derivative,
    _check_dimension,
)

logger = logging.getLogger(__name__)

FLOQUET_TOL = 1e-6
OVERFLOW_DELTA = 50.0

TRANSLATION = "translation"
PARAMETER = "parameter"
EXPLICIT_PLUS = "explicit_plus"
EXPLICIT_MINUS = "explicit_minus"


def mode_eigenvalue(n, j):
    """Eigenvalue j(j+n-2) of -Laplacian on S^(n-1)"""
    if j < 0:
        raise DomainError("spherical harmonic degree must be >= 0")
    return float(j * (j + n - 2))


def harmonic_multiplicity(n, j):
    """Dimension of degree-j spherical harmonics on S^(n-1)"""
    if j == 0:
        return 1
    return int(comb(j + n - 1, n - 1, exact=True) - comb(j + n - 3, n - 1, exact=True))


@dataclass(eq=False)
class ModeSystem:
    """phi'' = (lambda_j + (n-2)^2/4 - q(t)) phi with q = (n(n+2)/4) u^(4/(n-2))"""
    orbit: object
    j: int
    lam: float
    potential: np.ndarray

    @property
    def n(self):
        return self.orbit.n

    def coefficient(self):
        n = self.n
        shift = self.lam + 0.25 * (n - 2) ** 2
        b = 0.25 * n * (n + 2)
        q = 4.0 / (n - 2)
        return lambda u: shift - b * u ** q

    def apply(self, t, phi):
        """Residual L_j phi by central differences on a uniform grid"""
        h = t[1] - t[0]
        u, _ = self.orbit.evaluate(t)
        coeff = self.coefficient()(u)
        out = np.full_like(phi, np.nan)
        out[1:-1] = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / h ** 2 - coeff[1:-1] * phi[1:-1]
        return out


def mode_operator(orbit, j):
    lam = mode_eigenvalue(orbit.n, j)
    potential = 0.25 * orbit.n * (orbit.n + 2) * orbit.u ** (4.0 / (orbit.n - 2))
    return ModeSystem(orbit=orbit, j=j, lam=lam, potential=potential)


@dataclass(eq=False)
class FloquetResult:
    j: int
    multipliers: tuple
    delta: float
    oscillatory: bool
    trace: float
    period: float

    def to_record(self, n, eps):
        return {
            "n": n,
            "eps": eps,
            "j": self.j,
            "delta": self.delta,
            "multipliers": [[float(np.real(m)), float(np.imag(m))] for m in self.multipliers],
            "trace": self.trace,
            "oscillatory": self.oscillatory,
            "period": self.period,
            "convention": "delta_j is the growth of mode solutions per period",
        }


@dataclass(eq=False)
class JacobiField:
    """Sampled solution of a mode equation L_j phi = 0"""
    label: str
    j: int
    t: np.ndarray
    phi: np.ndarray
    phip: np.ndarray
    scale: float = 1.0
    degenerate: bool = False
    orbit: object = field(default=None, repr=False)

    def to_frame_columns(self):
        return {"t": self.t, "phi": self.phi, "phip": self.phip}


def sample_grid(orbit, periods=1.0, points_per_period=None):
    points = points_per_period or (orbit.t.size - 1)
    count = int(round(periods * points))
    return np.linspace(0.0, periods * orbit.period, count + 1)


def jacobi_translation(orbit, t=None):
    """phi_0^+ = u', normalized to unit sup-norm over one period"""
    t = sample_grid(orbit) if t is None else np.asarray(t, dtype=float)
    if orbit.degenerate:
        zeros = np.zeros_like(t)
        return JacobiField(TRANSLATION, 0, t, zeros, zeros, scale=0.0, degenerate=True, orbit=orbit)
    amplitude = float(np.max(np.abs(orbit.up)))
    u, up = orbit.evaluate(t)
    upp = orbit.second_derivative(t)
    return JacobiField(TRANSLATION, 0, t, up / amplitude, upp / amplitude, scale=amplitude, orbit=orbit)


def jacobi_parameter(orbit, t=None):
    """phi_0^- = du/d(eps) with phi(0) = 1, phi'(0) = 0 (linear growth)"""
    t = sample_grid(orbit) if t is None else np.asarray(t, dtype=float)
    if orbit.degenerate:
        w = math.sqrt(orbit.n - 2.0)
        return JacobiField(PARAMETER, 0, t, np.cos(w * t), -w * np.sin(w * t), degenerate=True, orbit=orbit)
    system = mode_operator(orbit, 0)
    values = integrate_with_orbit(orbit, system.coefficient(), t, [(1.0, 0.0)])
    return JacobiField(PARAMETER, 0, t, values[0, 0], values[0, 1], orbit=orbit)


def jacobi_explicit(orbit, sign, t=None):
    """w_(+/-)(t) = e^(+/-t) ((n-2)/2 u +/- u'), the j = 1 profiles"""
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    t = sample_grid(orbit) if t is None else np.asarray(t, dtype=float)
    n = orbit.n
    u, up = orbit.evaluate(t)
    upp = orbit.second_derivative(t)
    base = 0.5 * (n - 2) * u + sign * up
    base_p = 0.5 * (n - 2) * up + sign * upp
    growth = np.exp(sign * t)
    label = EXPLICIT_PLUS if sign > 0 else EXPLICIT_MINUS
    return JacobiField(label, 1, t, growth * base, growth * (sign * base + base_p), orbit=orbit)


def parameter_field_extension(orbit, t):
    """phi_0^- anywhere from one period: phi(t + kP) = phi(t) - k P' u'(t)"""
    t = np.asarray(t, dtype=float)
    if orbit.degenerate:
        return jacobi_parameter(orbit, t).phi
    base_t = sample_grid(orbit)
    base = jacobi_parameter(orbit, base_t)
    k = np.floor(t / orbit.period)
    tau = t - k * orbit.period
    phi_tau = np.interp(tau, base_t, base.phi)
    _, up = orbit.evaluate(t)
    return phi_tau - k * period_derivative(orbit) * up


def monodromy(orbit, j, tol=1e-12):
    system = mode_operator(orbit, j)
    values = integrate_with_orbit(orbit, system.coefficient(), [orbit.period], [(1.0, 0.0), (0.0, 1.0)], tol=tol)
    return np.array([[values[0, 0, 0], values[1, 0, 0]], [values[0, 1, 0], values[1, 1, 0]]])


def classify_trace(j, trace):
    """(delta, oscillatory) from the monodromy trace; delta <= FLOQUET_TOL counts as oscillatory"""
    if j == 0 and abs(trace - 2.0) <= FLOQUET_TOL:
        # periodic plus linearly growing pair
        return 0.0, True
    if abs(trace) <= 2.0 * math.cosh(FLOQUET_TOL):
        return 0.0, True
    # log of the larger real root, stable for large traces
    return math.acosh(abs(trace) / 2.0), False


def floquet(orbit, j):
    """Floquet multipliers and growth per period delta_j of the mode-j operator"""
    if orbit.degenerate:
        raise DomainError("floquet needs eps < u_bar; use indicial_roots_cylinder at the cylinder")
    m = monodromy(orbit, j)
    trace = float(np.trace(m))
    det = float(np.linalg.det(m))
    if abs(det - 1.0) > 1e-6:
        logger.warning(f"Wronskian drift {abs(det - 1.0):.2e} in mode {j}")
    if abs(trace) > 2.0 * math.exp(OVERFLOW_DELTA):
        raise NumericalError(f"monodromy of mode {j} overflows (delta > {OVERFLOW_DELTA})")
    disc = complex(trace * trace - 4.0 * det)
    root = np.sqrt(disc)
    multipliers = ((trace + root) / 2.0, (trace - root) / 2.0)
    biggest = max(abs(m_) for m_ in multipliers)
    delta, oscillatory = classify_trace(j, trace)
    logger.debug(f"Mode {j}: trace={trace:.8f} |mu|max={biggest:.6e} delta={delta:.10f}")
    return FloquetResult(j=j, multipliers=multipliers, delta=delta, oscillatory=oscillatory,
                         trace=trace, period=orbit.period)


def indicial_roots_cylinder(n, j):
    """Exponents of the constant-coefficient mode equation at eps = u_bar"""
    n = _check_dimension(n)
    radicand = mode_eigenvalue(n, j) - (n - 2)
    root = np.sqrt(complex(radicand))
    return (root, -root)


def fredholm_weights(orbit, jmax):
    """delta_0 = 0 < delta_1 = P_eps < delta_2 < ... for j = 0..jmax"""
    if jmax < 0:
        raise DomainError("jmax must be >= 0")
    if orbit.degenerate:
        roots = [indicial_roots_cylinder(orbit.n, j)[0] for j in range(jmax + 1)]
        return [float(abs(r.real)) * orbit.period for r in roots]
    return [floquet(orbit, j).delta for j in range(jmax + 1)]


def temperate_solution_count(orbit, delta, jmax=1):
    """Mode solutions with growth per period at most delta, with harmonic multiplicity.

    Mode j contributes both of its solutions when delta exceeds delta_j; j = 0
    always contributes two (periodic and linearly growing).
    """
    weights = fredholm_weights(orbit, jmax)
    count = 0
    for j, dj in enumerate(weights):
        if j == 0 or delta > dj:
            count += 2 * harmonic_multiplicity(orbit.n, j)
    return count


def half_delaunay_decaying_solution(orbit, j, periods=4):
    """Shooting proxy: the solution with phi(0) = 0, phi'(0) = 1 must not decay.

    Returns max |phi| over the last period divided by max |phi| over the
    first; a ratio well below 1 would signal a decaying Dirichlet Jacobi field.
    """
    if orbit.degenerate:
        raise DomainError("half-Delaunay proxy is defined for eps < u_bar")
    t = np.linspace(0.0, periods * orbit.period, 400 * periods + 1)
    system = mode_operator(orbit, j)
    values = integrate_with_orbit(orbit, system.coefficient(), t, [(0.0, 1.0)])
    phi = np.abs(values[0, 0])
    first = phi[t <= orbit.period]
    last = phi[t >= (periods - 1) * orbit.period]
    return float(np.max(last) / np.max(first))


def zonal_operator(n, j, rho_max, points, regular_far_pole=False):
    """Finite-volume form of f'' + (n-1)cot(rho) f' - j(j+n-2)/sin^2(rho) f on S^n.

    Nodes rho_i = i*h, i = 0..points. The pole node is kept (regular, even)
    for j = 0 and removed (f = 0) for j >= 1. The far end rho_max is Dirichlet
    unless regular_far_pole is set (rho_max = pi, j = 0). Returns the
    symmetrized tridiagonal (diagonal, offdiagonal) and node positions.
    """
    h = rho_max / points
    rho = np.arange(points + 1) * h
    half = (np.arange(points) + 0.5) * h
    flux = np.sin(half) ** (n - 1) / h
    volume = h * np.sin(rho) ** (n - 1)
    volume[0] = quad(lambda s: math.sin(s) ** (n - 1), 0.0, h / 2)[0]
    volume[-1] = quad(lambda s: math.sin(s) ** (n - 1), rho_max - h / 2, rho_max)[0]
    keep_far = regular_far_pole and j == 0
    first = 0 if j == 0 else 1
    last = points if keep_far else points - 1
    idx = np.arange(first, last + 1)
    lam = mode_eigenvalue(n, j)
    diag = np.zeros(idx.size)
    for k, i in enumerate(idx):
        left = flux[i - 1] if i > 0 else 0.0
        right = flux[i] if i < points else 0.0
        diag[k] = -(left + right)
        if j > 0:
            diag[k] -= lam * volume[i] / math.sin(rho[i]) ** 2
    off = flux[idx[:-1]]
    # symmetrize V^-1 K -> V^-1/2 K V^-1/2
    vol = volume[idx]
    diag = diag / vol
    off = off / np.sqrt(vol[:-1] * vol[1:])
    return diag, off, rho[idx]


def _cap_eigenvalue_on_grid(n, r, points):
    diag, off, _ = zonal_operator(n, 0, r, points)
    top = eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(diag.size - 1, diag.size - 1))
    return float(top[0]) + n


def cap_kernel_eigenvalue(n, r, points=4000):
    """Principal zonal Dirichlet eigenvalue of Delta + n on the geodesic cap of radius r.

    Second-order finite volumes with one Richardson step. Zero exactly at the
    hemisphere, where cos(rho) is the eigenfunction.
    """
    n = _check_dimension(n)
    if not (0.0 < r < math.pi):
        raise DomainError("cap radius must lie in (0, pi)")
    try:
        coarse = _cap_eigenvalue_on_grid(n, r, points)
        fine = _cap_eigenvalue_on_grid(n, r, 2 * points)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"cap eigenvalue failed: {e}") from e
    return (4.0 * fine - coarse) / 3.0


def locate_cap_degeneracy(n, lo=1.2, hi=2.0, xtol=1e-7, points=4000):
    """Radius where the cap eigenvalue changes sign (expected pi/2)"""
    return brentq(lambda r: cap_kernel_eigenvalue(n, r, points), lo, hi, xtol=xtol)


def sphere_kernel_operator(n, jmax=2, points=800):
    """Block-diagonal Delta + n on S^n split by degree on S^(n-1).

    Each block is the symmetrized zonal operator on (0, pi) for one degree j.
    Returns the sparse matrix and per-unknown harmonic multiplicities.
    """
    blocks, mult = [], []
    for j in range(jmax + 1):
        diag, off, _ = zonal_operator(n, j, math.pi, points, regular_far_pole=True)
        block = sp.diags([off, diag + n, off], [-1, 0, 1], format="csr")
        blocks.append(block)
        mult.extend([harmonic_multiplicity(n, j)] * block.shape[0])
    return sp.block_diag(blocks, format="csr"), np.array(mult)
