#!/usr/bin/env python3
# Delaunay conformal factors: the Fowler ODE on the cylinder
# u'' = ((n-2)^2/4) u - (n(n-2)/4) u^((n+2)/(n-2))

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq
from sklearn.linear_model import LinearRegression

from src.core.errors import DomainError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
# samples per period; mode residuals are second order in the spacing
DEFAULT_RESOLUTION = 16384
ENERGY_TOL = 1e-8
DRIFT_TOL = 1e-12
# smallest relative tolerance brentq accepts
BRENTQ_RTOL = 4 * np.finfo(float).eps


def _check_dimension(n):
    if int(n) != n or n < 3:
        raise DomainError(f"dimension must be an integer >= 3, got {n}")
    return int(n)


def critical_exponent(n):
    """(n+2)/(n-2)"""
    return (n + 2.0) / (n - 2.0)


def cylinder_constant(n):
    """The cylinder value u_bar = ((n-2)/n)^((n-2)/4), the largest neck parameter"""
    n = _check_dimension(n)
    return ((n - 2.0) / n) ** ((n - 2.0) / 4.0)


def linearized_period(n):
    """Period of small oscillations about u_bar"""
    n = _check_dimension(n)
    return 2.0 * math.pi / math.sqrt(n - 2.0)


def fowler_rhs(n, u):
    """Second derivative u'' of a Fowler solution at value u"""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0):
        raise DomainError("Fowler right-hand side needs u > 0")
    value = 0.25 * (n - 2) ** 2 * u_arr - 0.25 * n * (n - 2) * u_arr ** critical_exponent(n)
    return float(value) if value.ndim == 0 else value


def fowler_potential(n, u):
    """V(u) = ((n-2)^2/4)(u^(2n/(n-2)) - u^2)"""
    u_arr = np.asarray(u, dtype=float)
    return 0.25 * (n - 2) ** 2 * (u_arr ** (2.0 * n / (n - 2.0)) - u_arr ** 2)


def hamiltonian(n, u, up):
    """Conserved energy H = u'^2 + V(u) of the Fowler ODE"""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0):
        raise DomainError("Hamiltonian needs u > 0")
    value = np.asarray(up, dtype=float) ** 2 + fowler_potential(n, u_arr)
    return float(value) if np.ndim(value) == 0 else value


def umax_from_energy(n, eps):
    """Largest value of the orbit through the minimum eps, from V(u_max) = V(eps)"""
    n = _check_dimension(n)
    u_bar = cylinder_constant(n)
    _check_eps(n, eps)
    if eps >= u_bar * (1.0 - 1e-13):
        return u_bar
    level = float(fowler_potential(n, eps))
    try:
        return brentq(lambda u: float(fowler_potential(n, u)) - level, u_bar, 1.0, xtol=1e-15, rtol=BRENTQ_RTOL)
    except ValueError as e:
        raise NumericalError(f"could not bracket u_max for n={n}, eps={eps}: {e}") from e


def eps_from_energy(n, energy):
    """Inverse of eps -> H(eps, 0) on (0, u_bar]"""
    n = _check_dimension(n)
    u_bar = cylinder_constant(n)
    floor = float(fowler_potential(n, u_bar))
    if energy <= floor:
        return u_bar
    if energy >= 0:
        raise DomainError(f"energy {energy} is not attained by a Delaunay orbit")
    try:
        return brentq(lambda e: float(fowler_potential(n, e)) - energy, 1e-300, u_bar, xtol=1e-16, rtol=BRENTQ_RTOL)
    except ValueError as e:
        raise NumericalError(f"could not invert the energy level {energy} for n={n}: {e}") from e


def sphere_profile(n, t, t0=0.0):
    """The H = 0 homoclinic cosh(t - t0)^(-(n-2)/2): a round unit sphere"""
    return np.cosh(np.asarray(t, dtype=float) - t0) ** (-(n - 2.0) / 2.0)


def sphere_profile_derivative(n, t, t0=0.0):
    s = np.asarray(t, dtype=float) - t0
    return -(n - 2.0) / 2.0 * np.tanh(s) * np.cosh(s) ** (-(n - 2.0) / 2.0)


def _check_eps(n, eps):
    u_bar = cylinder_constant(n)
    if not (0.0 < eps <= u_bar * (1.0 + 1e-12)):
        raise DomainError(f"eps must lie in (0, {u_bar:.6f}] for n={n}, got {eps}")


def _orbit_rhs(n):
    p = critical_exponent(n)
    a = 0.25 * (n - 2) ** 2
    b = 0.25 * n * (n - 2)

    def rhs(t, y):
        return [y[1], a * y[0] - b * y[0] ** p]
    return rhs


@dataclass(eq=False)
class DelaunayOrbit:
    """One period of a Delaunay factor u_eps with its first integral.

    Samples cover [0, period] uniformly (endpoint included) and are extended
    periodically by cubic Hermite interpolation with exact second derivatives.
    """
    n: int
    eps: float
    t: np.ndarray
    u: np.ndarray
    up: np.ndarray
    period: float
    energy: float
    u_max: float
    tol: float = DEFAULT_TOL
    degenerate: bool = False
    energy_drift: float = 0.0
    _u_spline: object = field(default=None, repr=False)
    _up_spline: object = field(default=None, repr=False)

    def __post_init__(self):
        upp = fowler_rhs(self.n, self.u)
        self._u_spline = CubicHermiteSpline(self.t, self.u, self.up)
        self._up_spline = CubicHermiteSpline(self.t, self.up, upp)

    @property
    def u_bar(self):
        return cylinder_constant(self.n)

    def evaluate(self, t):
        """(u, u') at arbitrary t by periodic extension"""
        t = np.asarray(t, dtype=float)
        if self.degenerate:
            return np.full_like(t, self.eps), np.zeros_like(t)
        tau = np.mod(t, self.period)
        return self._u_spline(tau), self._up_spline(tau)

    def second_derivative(self, t):
        u, _ = self.evaluate(t)
        return fowler_rhs(self.n, u)

    def header(self):
        return {
            "n": self.n,
            "eps": self.eps,
            "period": self.period,
            "energy": self.energy,
            "u_max": self.u_max,
            "tol": self.tol,
            "degenerate": self.degenerate,
            "energy_drift": self.energy_drift,
        }


def _polish_root(fun, t_event, width):
    """Refine a sign change of fun near t_event to 1e-12 in t"""
    lo, hi = t_event - width, t_event + width
    if fun(lo) * fun(hi) > 0:
        return t_event
    return brentq(fun, lo, hi, xtol=1e-13)


def solve_orbit(n, eps, horizon=None, tol=DEFAULT_TOL, resolution=DEFAULT_RESOLUTION, energy_tol=ENERGY_TOL):
    """Integrate the Fowler ODE from the minimum (eps, 0) for one full period"""
    n = _check_dimension(n)
    _check_eps(n, eps)
    u_bar = cylinder_constant(n)

    if eps >= u_bar * (1.0 - 1e-12):
        period = linearized_period(n)
        t = np.linspace(0.0, period, resolution + 1)
        logger.info(f"Degenerate orbit at eps = u_bar for n={n}; period set to {period:.6f}")
        return DelaunayOrbit(
            n=n, eps=u_bar, t=t, u=np.full_like(t, u_bar), up=np.zeros_like(t),
            period=period, energy=float(fowler_potential(n, u_bar)), u_max=u_bar,
            tol=tol, degenerate=True,
        )

    rhs = _orbit_rhs(n)
    atol = tol * 1e-3 * eps
    horizon = float(horizon) if horizon else 2.0 * linearized_period(n) + 8.0 / (n - 2) * math.log(1.0 / eps)
    budget = 64.0 * horizon

    def at_max(t, y):
        return y[1]
    at_max.terminal = True
    at_max.direction = -1

    def at_min(t, y):
        return y[1]
    at_min.terminal = True
    at_min.direction = 1

    # Stage 1: minimum -> maximum; stage 2: maximum -> next minimum
    while True:
        first = solve_ivp(rhs, (0.0, horizon), [eps, 0.0], method="DOP853", rtol=tol, atol=atol,
                          events=at_max, dense_output=True)
        if first.t_events[0].size:
            t_top = float(first.t_events[0][0])
            y_top = first.sol(t_top)
            second = solve_ivp(rhs, (t_top, t_top + horizon), y_top, method="DOP853", rtol=tol, atol=atol,
                               events=at_min, dense_output=True)
            if second.t_events[0].size:
                break
        if horizon >= budget:
            raise NumericalError(f"no period detected for n={n}, eps={eps} within t <= {horizon:.1f}")
        horizon *= 2.0
        logger.debug(f"Extending horizon to {horizon:.2f}")

    t_top = _polish_root(lambda s: first.sol(s)[1], t_top, 1e-6)
    period = float(second.t_events[0][0])
    period = _polish_root(lambda s: second.sol(s)[1], period, 1e-6)

    t = np.linspace(0.0, period, resolution + 1)
    y = np.where(t <= t_top, first.sol(np.minimum(t, first.t[-1])), second.sol(np.maximum(t, t_top)))
    u, up = y[0], y[1]
    u[0], up[0] = eps, 0.0
    u[-1], up[-1] = eps, 0.0

    energy = float(fowler_potential(n, eps))
    drift = float(np.max(np.abs(hamiltonian(n, u, up) - energy)) / abs(energy))
    if drift > energy_tol:
        logger.warning(f"Energy drift {drift:.2e} exceeds {energy_tol:.0e} for n={n}, eps={eps}")
    if drift > 1e3 * energy_tol:
        raise NumericalError(f"integration lost the energy level: relative drift {drift:.2e}")

    u_max = float(first.sol(t_top)[0])
    logger.debug(f"Orbit n={n} eps={eps}: period={period:.10f} u_max={u_max:.10f}")
    return DelaunayOrbit(n=n, eps=float(eps), t=t, u=u, up=up, period=period, energy=energy,
                         u_max=u_max, tol=tol, energy_drift=drift)


def integrate_with_orbit(orbit, coefficient, t_eval, initial_states, tol=1e-12):
    """Integrate linear ODEs phi'' = coefficient(u) * phi jointly with the orbit.

    Integrates outwards from t = 0 (where u = eps, u' = 0) in both directions
    so that the orbit is re-solved rather than interpolated. Returns an array
    of shape (len(initial_states), 2, len(t_eval)) with (phi, phi').
    """
    rhs_orbit = _orbit_rhs(orbit.n)
    k = len(initial_states)

    def rhs(t, y):
        du = rhs_orbit(t, y[:2])
        c = coefficient(y[0])
        out = [du[0], du[1]]
        for i in range(k):
            out.extend([y[3 + 2 * i], c * y[2 + 2 * i]])
        return out

    t_eval = np.asarray(t_eval, dtype=float)
    result = np.empty((k, 2, t_eval.size))
    y0 = [orbit.eps, 0.0] + [float(v) for state in initial_states for v in state]
    atol = tol * 1e-2
    for mask, bound in ((t_eval >= 0, max(float(t_eval.max()), 0.0)), (t_eval < 0, min(float(t_eval.min()), 0.0))):
        if not np.any(mask):
            continue
        if bound == 0.0:
            result[:, :, mask] = np.reshape(y0[2:], (k, 2))[:, :, None]
            continue
        sol = solve_ivp(rhs, (0.0, bound), y0, method="DOP853", rtol=tol, atol=atol, dense_output=True)
        if not sol.success:
            raise NumericalError(f"mode integration failed: {sol.message}")
        values = sol.sol(t_eval[mask])[2:]
        result[:, :, mask] = values.reshape(k, 2, -1)
    return result


def variation_coefficient(n):
    """d(fowler_rhs)/du, the j = 0 mode coefficient"""
    a = 0.25 * (n - 2) ** 2
    b = 0.25 * n * (n + 2)
    q = 4.0 / (n - 2)
    return lambda u: a - b * u ** q


def period_derivative(orbit):
    """dP/d(eps) from the eps-variation: P' = -phi'(P) / u''(0)"""
    if orbit.degenerate:
        return 0.0
    values = integrate_with_orbit(orbit, variation_coefficient(orbit.n), [orbit.period], [(1.0, 0.0)])
    return float(-values[0, 1, 0] / fowler_rhs(orbit.n, orbit.eps))


def hamiltonian_drift(orbit, periods=10, points_per_period=512, tol=DRIFT_TOL):
    """Relative energy drift of a fresh integration over several periods"""
    if orbit.degenerate:
        return 0.0
    rhs = _orbit_rhs(orbit.n)
    t_eval = np.linspace(0.0, periods * orbit.period, periods * points_per_period + 1)
    sol = solve_ivp(rhs, (0.0, t_eval[-1]), [orbit.eps, 0.0], method="DOP853",
                    rtol=tol, atol=tol * 1e-2 * orbit.eps, t_eval=t_eval)
    h = hamiltonian(orbit.n, sol.y[0], sol.y[1])
    return float(np.max(np.abs(h - orbit.energy)) / abs(orbit.energy))


def orbit_family(n, eps_list, n_jobs=1, **kwargs):
    """Solve several orbits in parallel"""
    return Parallel(n_jobs=n_jobs)(delayed(solve_orbit)(n, eps, **kwargs) for eps in eps_list)


def period_asymptotics(n, eps_list=(1e-2, 1e-3, 1e-4), n_jobs=1):
    """Offsets P(eps) - (4/(n-2)) log(1/eps) and their fitted slope in log(1/eps)"""
    orbits = orbit_family(n, eps_list, n_jobs=n_jobs)
    logs = np.log(1.0 / np.asarray(eps_list, dtype=float))
    offsets = np.array([o.period for o in orbits]) - 4.0 / (n - 2) * logs
    fit = LinearRegression().fit(logs.reshape(-1, 1), offsets)
    return {
        "eps": list(map(float, eps_list)),
        "periods": [o.period for o in orbits],
        "offsets": offsets.tolist(),
        "slope": float(fit.coef_[0]),
        "intercept": float(fit.intercept_),
    }
