#!/usr/bin/env python3
# Contraction iteration to a constant scalar curvature factor, and its certification

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from src.core.errors import DivergenceError, DomainError, NumericalError, TrustRegionError
from src.delaunay.fowler import cylinder_constant, eps_from_energy, fowler_potential, hamiltonian, solve_orbit
from src.geometry.conformal import scalar_curvature_of
from src.geometry.grids import DiscreteField, theta_volumes
from src.gluing.factor import approximate_factor, summand_defect
from src.gluing.manifold import ACTIVE, DIRICHLET, FRINGE, HOLE, build_connected_sum
from src.monitoring.solve_monitor import SolveMonitor
from src.corrector.deficiency import deficiency_basis, end_modification
from src.corrector.linear import BorderedSystem, assemble_linearization, kernel_diagnostic, weighted_norm
from src.corrector.weights import weight as make_weight

logger = logging.getLogger(__name__)

FIXED_POINT = "fixed_point"
NEWTON = "newton_accelerated"


@dataclass(frozen=True)
class SolverConfig:
    delta: float = 0.5
    max_iterations: int = 30
    residual_target: float = 1e-9
    contraction_window: int = 3
    mode: str = FIXED_POINT
    damping_floor: float = 1.0 / 64.0
    deficiency_collar: float = 1.0

    def __post_init__(self):
        if self.residual_target <= 0:
            raise DomainError("residual_target must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.mode not in (FIXED_POINT, NEWTON):
            raise DomainError(f"unknown solver mode {self.mode}")


@dataclass(eq=False)
class SolveReport:
    converged: bool
    iterations: list
    v: np.ndarray = field(repr=False)
    coefficients: list
    coefficient_labels: list
    factor: np.ndarray = field(repr=False)
    residual: float
    curvature_defect: float
    reference_defect: float
    end_parameters: dict
    end_estimates: dict = field(default_factory=dict)
    contraction_estimate: float = None
    degenerate_ends: list = field(default_factory=list)
    truncation_delta: float = None
    manifold: object = field(default=None, repr=False)
    config: SolverConfig = None

    def to_record(self):
        return {
            "converged": self.converged,
            "iterations": len(self.iterations),
            "trace": self.iterations,
            "coefficients": dict(zip(self.coefficient_labels, self.coefficients)),
            "residual": self.residual,
            "curvature_defect": self.curvature_defect,
            "reference_defect": self.reference_defect,
            "end_parameters": self.end_parameters,
            "end_estimates": self.end_estimates,
            "contraction_estimate": self.contraction_estimate,
            "degenerate_ends": self.degenerate_ends,
            "truncation_delta": self.truncation_delta,
            "solver": self.config.__dict__.copy() if self.config else None,
            "correction_sup": float(np.max(np.abs(self.v))) if self.v.size else 0.0,
        }


class GluedProblem:
    """Nonlinear map F(v, c) of the corrected equation on a glued manifold"""

    def __init__(self, glued, delta, collar=1.0):
        self.glued = glued
        self.u_T = approximate_factor(glued).values
        self.defect = summand_defect(glued)
        self.basis = deficiency_basis(glued, collar)
        self.weight = make_weight(glued, delta)
        self.status = glued.status
        self.active = self.status == ACTIVE
        self.fixed = (self.status == DIRICHLET) | (self.status == HOLE)
        self.fringe = self.status == FRINGE
        self.volumes = glued.volumes
        self.orbit_cache = {}

    @property
    def size(self):
        return self.glued.size

    def modified(self, coefficients):
        return end_modification(
            self.glued, self.basis, coefficients, base=self.u_T, defect=self.defect, orbit_cache=self.orbit_cache
        )

    def factor(self, x):
        v, c = x[:self.size], x[self.size:]
        return self.modified(c).values + v

    def residual(self, x):
        v, c = x[:self.size], x[self.size:]
        mod = self.modified(c)
        u = mod.values + v
        if np.any(u[self.active | self.fringe] <= 0):
            raise DomainError("conformal factor lost positivity")
        out = self.glued.pde_residual(u) - mod.defect
        out[self.fixed] = v[self.fixed]
        out[self.fringe] = self.glued.interpolation_defect(u)[self.fringe]
        return out

    def norm(self, F):
        """||F||_(0,-delta) on active rows, plus the sup of the constraint rows"""
        pde = weighted_norm(self.glued, self.weight, F, self.volumes)
        constraints = F[~self.active]
        return pde + (float(np.max(np.abs(constraints))) if constraints.size else 0.0)

    def system(self, x):
        u = self.factor(x)
        operator = assemble_linearization(self.glued, u)
        return BorderedSystem(self.glued, operator, self.basis, self.weight)


def _step(problem, system, x, F, mode):
    if mode == NEWTON:
        solution = system.solve(F, rows=system.constraints @ x[:problem.size])
        return x - np.concatenate([solution.v, solution.coefficients])
    # x_(k+1) = -G (F(x_k) - B x_k): the map v -> -G(f_T + Q(v))
    solution = system.solve(F - system.matrix @ x)
    return -np.concatenate([solution.v, solution.coefficients])


def _damped(problem, x, proposal, floor):
    """Halve the step until the factor stays positive and inside the trust region"""
    theta = 1.0
    while True:
        candidate = x + theta * (proposal - x)
        try:
            F = problem.residual(candidate)
            return candidate, F, theta
        except (DomainError, TrustRegionError) as exc:
            theta *= 0.5
            if theta < floor:
                raise NumericalError(f"step damping below {floor}: {exc}") from exc
            logger.warning(f"Damping step to {theta} ({exc})")


def certify(glued, factor):
    """Sup over active nodes of |R(g) - n(n-1)| for the metric factor^(4/(n-2)) g_background"""
    n = glued.n
    target = float(n * (n - 1))
    worst = 0.0
    for p in glued.patches:
        u = DiscreteField(p.chart, np.asarray(factor[p.slice]).reshape(p.chart.shape))
        if np.any(u.values <= 0):
            return float("inf")
        R = scalar_curvature_of(u, p.descriptor, p.matrix).values
        active = p.status == ACTIVE
        if np.any(active):
            worst = max(worst, float(np.max(np.abs(R[active] - target))))
    return worst


def contraction_solve(glued, config=None):
    config = config or SolverConfig()
    problem = GluedProblem(glued, config.delta, config.deficiency_collar)
    monitor = SolveMonitor(window=config.contraction_window)
    x = np.zeros(problem.size + problem.basis.dimension)
    F = problem.residual(x)
    residual = problem.norm(F)
    monitor.log_iteration(0, residual, float("nan"))
    system = None
    converged = residual <= config.residual_target
    k = 0
    while not converged and k < config.max_iterations:
        k += 1
        if system is None or config.mode == NEWTON:
            system = problem.system(x)
        proposal = _step(problem, system, x, F, config.mode)
        x_new, F, theta = _damped(problem, x, proposal, config.damping_floor)
        increment = float(np.max(np.abs(x_new - x)))
        x = x_new
        residual = problem.norm(F)
        monitor.log_iteration(k, residual, increment, damping=theta)
        converged = residual <= config.residual_target
        if not converged and monitor.detect_divergence()["status"] == "diverging":
            report = _report(problem, monitor, x, False, config)
            raise DivergenceError(
                f"contraction ratio >= 1 over {config.contraction_window} iterations; increase T or reduce delta",
                ratios=monitor.ratio_trace(), report=report,
            )
    report = _report(problem, monitor, x, converged, config)
    if not converged:
        logger.warning(f"No convergence after {config.max_iterations} iterations: residual {report.residual:.3e}")
    return report


def _reference_defect(glued):
    """Curvature defect of the exact summand factors on the same grids"""
    worst = 0.0
    n = glued.n
    for p in glued.bodies:
        T, _ = p.chart.mesh()
        u_eps, _ = glued.orbits[p.index].evaluate(T)
        u = DiscreteField(p.chart, u_eps)
        R = scalar_curvature_of(u, p.descriptor, p.matrix).values
        active = p.status == ACTIVE
        worst = max(worst, float(np.max(np.abs(R[active] - n * (n - 1)))))
    return worst


def _report(problem, monitor, x, converged, config):
    glued = problem.glued
    size = problem.size
    factor = problem.factor(x)
    mod = problem.modified(x[size:])
    summary = monitor.summary()
    F = problem.residual(x)
    return SolveReport(
        converged=bool(converged),
        iterations=monitor.entries,
        v=x[:size],
        coefficients=[float(c) for c in x[size:]],
        coefficient_labels=list(problem.basis.labels),
        factor=factor,
        residual=problem.norm(F),
        curvature_defect=certify(glued, factor),
        reference_defect=_reference_defect(glued),
        end_parameters=mod.end_parameters,
        contraction_estimate=summary.get("contraction_estimate"),
        degenerate_ends=list(problem.basis.degenerate),
        manifold=glued,
        config=config,
    )


def final_kernel_count(report, window=1e-6):
    """Near-kernel count of L at the solved factor in the decaying weighted space"""
    glued = report.manifold
    operator = assemble_linearization(glued, report.factor)
    w = make_weight(glued, report.config.delta)
    return kernel_diagnostic(operator, w, window)


def _end_profile(glued, factor, end):
    body = glued.body(end.summand)
    orbit = glued.orbits[end.summand]
    values = np.asarray(factor[body.slice]).reshape(body.chart.shape)
    t = body.chart.s
    weights = theta_volumes(glued.n, body.chart.theta)
    profile = values @ weights / np.sum(weights)
    h = body.chart.h_s
    # last full period before the truncation, skipping the boundary node
    if end.sign > 0:
        window = (t >= end.far_edge - orbit.period - 2 * h) & (t <= end.far_edge - h)
    else:
        window = (t <= end.far_edge + orbit.period + 2 * h) & (t >= end.far_edge + h)
    if np.sum(window) < 8 or abs(end.far_edge - end.core_edge) < orbit.period + 2 * h:
        raise DomainError(f"end {end.label} is shorter than one period")
    return t[window], profile[window], orbit


@dataclass
class EndEstimate:
    label: str
    eps: float
    width: float
    energy: float
    cylindrical: bool
    prescribed: float

    def to_record(self):
        return self.__dict__.copy()


def end_parameter_estimate(report, end_label, fit=True):
    """Delaunay parameter of a solved end from its theta-averaged profile over the last period"""
    return factor_end_estimate(report.manifold, report.factor, end_label, fit)


def factor_end_estimate(glued, factor, end_label, fit=True):
    end = next((e for e in glued.ends if e.label == end_label), None)
    if end is None:
        raise DomainError(f"unknown end {end_label}")
    t, u, orbit = _end_profile(glued, factor, end)
    n = glued.n
    u_bar = cylinder_constant(n)
    up = np.gradient(u, t)
    energy = float(np.mean(hamiltonian(n, u, up)))
    if np.ptp(u) < 1e-6 * u_bar:
        return EndEstimate(end_label, float(np.mean(u)), float(np.ptp(u)), energy, True, orbit.eps)
    if energy >= 0 or energy <= float(fowler_potential(n, u_bar)):
        raise NumericalError(f"end {end_label} energy {energy:.4e} outside the Delaunay range")
    eps0 = eps_from_energy(n, energy)
    if not fit:
        return EndEstimate(end_label, eps0, float(np.std(hamiltonian(n, u, up))), energy, False, orbit.eps)

    guess_orbit = solve_orbit(n, eps0, tol=1e-9)
    shift0 = float(t[np.argmin(u)])

    def model(params):
        eps, shift = params
        trial = guess_orbit if eps == eps0 else solve_orbit(n, eps, tol=1e-9)
        values, _ = trial.evaluate(t - shift)
        return values - u

    upper = u_bar * (1.0 - 1e-9)
    start = [min(max(eps0, 1e-6), upper * (1.0 - 1e-9)), shift0]
    result = least_squares(model, start, bounds=([1e-6, shift0 - orbit.period], [upper, shift0 + orbit.period]),
                           x_scale=[max(eps0, 1e-3), 1.0], xtol=1e-12, ftol=1e-12)
    dof = max(t.size - 2, 1)
    sigma2 = float(np.sum(result.fun ** 2)) / dof
    try:
        cov = np.linalg.inv(result.jac.T @ result.jac) * sigma2
        width = float(math.sqrt(max(cov[0, 0], 0.0)))
    except np.linalg.LinAlgError:
        width = float("nan")
    return EndEstimate(end_label, float(result.x[0]), width, energy, False, orbit.eps)


def estimate_all_ends(report):
    report.end_estimates = estimate_factor_ends(report.manifold, report.factor)
    return report.end_estimates


def estimate_factor_ends(glued, factor):
    return {end.label: factor_end_estimate(glued, factor, end.label).to_record() for end in glued.ends}


def truncation_sensitivity(gluing_config, solver_config=None, orbits=None):
    """Curvature defect with the end truncation as configured and doubled"""
    solver_config = solver_config or SolverConfig()
    base = contraction_solve(build_connected_sum(gluing_config, orbits), solver_config)
    longer_config = gluing_config.with_grid(end_periods=2.0 * gluing_config.grid.end_periods)
    longer = contraction_solve(build_connected_sum(longer_config, orbits), solver_config)
    change = abs(longer.curvature_defect - base.curvature_defect)
    relative = change / base.curvature_defect if base.curvature_defect > 0 else 0.0
    base.truncation_delta = relative
    return {
        "end_periods": [gluing_config.grid.end_periods, longer_config.grid.end_periods],
        "curvature_defect": [base.curvature_defect, longer.curvature_defect],
        "relative_change": relative,
        "accepted": bool(relative <= 0.2),
    }

