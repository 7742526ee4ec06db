#!/usr/bin/env python3
# Linearized operator L_T, bordered solves with W and operator diagnostics

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import eigsh, splu
from scipy.sparse.linalg import norm as sparse_norm

from src.core.errors import NumericalError
from src.delaunay.fowler import solve_orbit
from src.geometry.conformal import linearize
from src.geometry.grids import DiscreteField
from src.gluing.cutoffs import ramp
from src.gluing.factor import approximate_factor
from src.gluing.manifold import ACTIVE, FRINGE, build_connected_sum, flat_distance
from src.corrector.deficiency import decay_constraints, deficiency_basis
from src.corrector.weights import weight as make_weight

logger = logging.getLogger(__name__)

SOLVE_TOL = 1e-10


def assemble_linearization(glued, u):
    """Global L_T: linearized Yamabe rows at active nodes, identity at fixed nodes, I - E at fringe nodes"""
    n = glued.n
    target = float(n * (n - 1))
    u = np.asarray(u, dtype=float)
    blocks = []
    for p in glued.patches:
        field_ = DiscreteField(p.chart, u[p.slice].reshape(p.chart.shape))
        blocks.append(linearize(field_, p.descriptor, target, p.matrix))
    pde = sp.block_diag(blocks, format="csr")
    status = glued.status
    active = (status == ACTIVE).astype(float)
    fringe = (status == FRINGE).astype(float)
    operator = sp.diags(active) @ pde + sp.diags(1.0 - active) - sp.diags(fringe) @ glued.interpolation
    return operator.tocsr()


@dataclass(eq=False)
class BorderedSolution:
    v: np.ndarray = field(repr=False)
    coefficients: np.ndarray
    residual: float
    z: np.ndarray = field(repr=False)
    multipliers: np.ndarray = field(default=None, repr=False)


class BorderedSystem:
    """Minimal weighted-norm right inverse of B = [L_T | L_T W] under the end decay rows C.

    Solves B x = f, C v = g for the x of least sum alpha^(2 delta) v^2 + |c|^2,
    x = D [B; C]^T [z; y] with D = diag(alpha^(-2 delta), 1). Only the sparse
    L_T D L_T^T is factored: the rank-dim(W) border U U^T with U = L_T W enters
    through the Woodbury identity and the few decay rows through a Schur
    complement.
    """

    def __init__(self, glued, operator, basis, weight, constraints=None):
        self.glued = glued
        self.operator = operator
        self.basis = basis
        self.weight = weight
        if constraints is None:
            constraints, self.constraint_labels = decay_constraints(glued)
        else:
            self.constraint_labels = [f"row{i}" for i in range(constraints.shape[0])]
        self.constraints = sp.csr_matrix(constraints)
        active = (glued.status == ACTIVE).astype(float)
        if basis.dimension:
            columns = sp.diags(active) @ (operator @ basis.fields.T)
            self.border = sp.csr_matrix(columns)
        else:
            self.border = sp.csr_matrix((glued.size, 0))
        self.matrix = sp.hstack([operator, self.border], format="csr")
        field_scaling = weight.values ** -2.0
        self.scaling = np.concatenate([field_scaling, np.ones(basis.dimension)])
        core = (operator @ sp.diags(field_scaling) @ operator.T).tocsc()
        try:
            self.factor = splu(core)
        except RuntimeError as exc:
            raise NumericalError(
                f"bordered normal system is singular ({exc}); run kernel_diagnostic for the near-kernel"
            ) from exc
        self.border_solved = None
        self.capacitance = None
        if basis.dimension:
            self.border_solved = self.factor.solve(self.border.toarray())
            capacitance = np.eye(basis.dimension) + self.border.T @ self.border_solved
            try:
                self.capacitance = cho_factor(capacitance)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"deficiency border is degenerate: {exc}") from exc
        self.coupling = None
        self.coupling_solved = None
        self.schur = None
        if self.constraints.shape[0]:
            scaled = sp.diags(field_scaling) @ self.constraints.T
            self.coupling = np.asarray((operator @ scaled).todense())
            self.coupling_solved = self._normal_solve(self.coupling)
            gram = np.asarray((self.constraints @ scaled).todense())
            try:
                self.schur = cho_factor(gram - self.coupling.T @ self.coupling_solved)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"end decay rows are degenerate: {exc}") from exc
        logger.debug(
            f"Bordered system: {glued.size} unknowns, border rank {basis.dimension}, "
            f"{self.constraints.shape[0]} decay rows, core nnz {core.nnz}"
        )

    @property
    def dimension(self):
        return self.basis.dimension

    def _normal_solve(self, rhs):
        z = self.factor.solve(rhs)
        if self.capacitance is not None:
            z = z - self.border_solved @ cho_solve(self.capacitance, self.border.T @ z)
        return z

    def _apply(self, rhs, rhs_rows):
        z = self._normal_solve(rhs)
        x = self.scaling * (self.matrix.T @ z)
        if self.schur is None:
            return x, z, np.zeros(0)
        y = cho_solve(self.schur, rhs_rows - self.coupling.T @ z)
        z = z - self.coupling_solved @ y
        x = self.scaling * (self.matrix.T @ z)
        x[:self.glued.size] += self.scaling[:self.glued.size] * (self.constraints.T @ y)
        return x, z, y

    def _residuals(self, f, g, x):
        return f - self.matrix @ x, g - self.constraints @ x[:self.glued.size]

    def solve(self, f, rows=None, refinements=3):
        """x with B x = f and C v = rows (zero by default)"""
        f = np.asarray(f, dtype=float)
        g = np.zeros(self.constraints.shape[0]) if rows is None else np.asarray(rows, dtype=float)
        x, z, y = self._apply(f, g)
        scale = max(1.0, float(np.max(np.abs(f))), float(np.max(np.abs(g), initial=0.0)))
        for _ in range(refinements):
            r, rg = self._residuals(f, g, x)
            if max(np.max(np.abs(r)), np.max(np.abs(rg), initial=0.0)) <= SOLVE_TOL * scale * 1e-2:
                break
            dx, dz, dy = self._apply(r, rg)
            x = x + dx
            z = z + dz
            y = y + dy
        r, rg = self._residuals(f, g, x)
        residual = float(max(np.max(np.abs(r)), np.max(np.abs(rg), initial=0.0)))
        if not np.isfinite(residual) or residual > SOLVE_TOL * scale:
            raise NumericalError(
                f"bordered solve residual {residual:.3e} above {SOLVE_TOL:.0e}; the system is ill-conditioned"
            )
        size = self.glued.size
        return BorderedSolution(x[:size], x[size:], residual, z, y)

    def weighted_pairing(self, solution, vector):
        """<x, k> in the inner product D^-1; vanishes for k with B k = 0 and C k = 0"""
        x = np.concatenate([solution.v, solution.coefficients])
        return float(np.sum(x * np.asarray(vector) / self.scaling))


def solve_bordered(glued, operator, basis, f, weight):
    system = BorderedSystem(glued, operator, basis, weight)
    return system.solve(f)


def weighted_norm(glued, weight, vector, volumes=None):
    volumes = glued.volumes if volumes is None else volumes
    return weight.norm(vector, volumes, glued.status == ACTIVE)


def second_order_norm(glued, weight, vector, volumes=None):
    """H^2 proxy: weighted L2 norm of the field plus that of its Laplacian"""
    lap = glued.laplacian @ np.asarray(vector)
    return weighted_norm(glued, weight, vector, volumes) + weighted_norm(glued, weight, lap, volumes)


def random_probes(glued, count, rng, width=1.0):
    """Smooth compactly supported fields: a bump in s times a few zonal harmonics"""
    probes = []
    for _ in range(count):
        patch = glued.patches[rng.integers(len(glued.patches))]
        S, TH = patch.chart.mesh()
        if patch.role == "body":
            end_lo = [e.core_edge for e in glued.ends if e.summand == patch.index and e.sign < 0][0]
            end_hi = [e.core_edge for e in glued.ends if e.summand == patch.index and e.sign > 0][0]
            center = rng.uniform(end_lo - 2.0, end_hi + 2.0)
        else:
            lo, hi = patch.chart.s_range
            center = rng.uniform(lo + 2.0, hi - 2.0)
        bump = np.exp(-((S - center) / width) ** 2) * (np.abs(S - center) < 4.0 * width)
        coeffs = rng.standard_normal(3)
        values = bump * sum(c * np.cos(k * TH) for k, c in enumerate(coeffs))
        if patch.role == "body":
            summand = glued.config.summands[patch.index]
            for point in summand.points:
                values = values * ramp(flat_distance(S, TH, point), 2.0 * summand.alpha, 3.0 * summand.alpha)
        values = np.where(patch.status == ACTIVE, values, 0.0)
        arrays = {p.name: np.zeros(p.chart.shape) for p in glued.patches}
        arrays[patch.name] = values
        probes.append(glued.join(arrays))
    return probes


@dataclass(eq=False)
class KernelReport:
    count: int
    singular_values: list
    scale: float
    window: float
    vectors: np.ndarray = field(repr=False)
    rayleigh: list = field(default_factory=list)
    full_count: int = 0

    def to_record(self):
        return {
            "count": self.count,
            "full_count": self.full_count,
            "singular_values": self.singular_values,
            "scale": self.scale,
            "window": self.window,
            "rayleigh": self.rayleigh,
        }


def kernel_diagnostic(operator, weight=None, window=1e-6, k=6, multiplicities=None):
    """Smallest singular values of alpha^delta L alpha^(-delta); near-kernel below window * scale"""
    operator = sp.csr_matrix(operator)
    size = operator.shape[0]
    if weight is not None:
        w = np.asarray(weight.values if hasattr(weight, "values") else weight, dtype=float)
        conjugated = sp.diags(w) @ operator @ sp.diags(1.0 / w)
    else:
        w = np.ones(size)
        conjugated = operator
    conjugated = conjugated.tocsr()
    scale = float(np.sqrt(sparse_norm(conjugated, 1) * sparse_norm(conjugated, np.inf)))
    gram = (conjugated.T @ conjugated).tocsc()
    k = max(1, min(k, size - 2))
    shift = -(1e-10 * scale) ** 2
    try:
        values, vectors = eigsh(gram, k=k, sigma=shift, which="LM")
    except Exception as exc:
        raise NumericalError(f"near-kernel eigen-solve failed: {exc}") from exc
    order = np.argsort(values)
    singular = np.sqrt(np.maximum(values[order], 0.0))
    vectors = vectors[:, order]
    near = singular < window * scale
    kernel = vectors[:, near] / w[:, None]
    rayleigh = [
        float(np.linalg.norm(conjugated @ vectors[:, i]) / np.linalg.norm(vectors[:, i])) for i in np.flatnonzero(near)
    ]
    full = int(np.sum(near))
    if multiplicities is not None:
        multiplicities = np.asarray(multiplicities)
        full = int(sum(multiplicities[np.argmax(np.abs(vectors[:, i]))] for i in np.flatnonzero(near)))
    logger.info(f"Near-kernel count {int(np.sum(near))} (window {window:.1e} x scale {scale:.3e})")
    return KernelReport(
        count=int(np.sum(near)),
        singular_values=[float(s) for s in singular],
        scale=scale,
        window=window,
        vectors=kernel.T,
        rayleigh=rayleigh,
        full_count=full,
    )


@dataclass
class PairingReport:
    matrix: np.ndarray
    singular_values: list
    smallest: float
    nondegenerate: bool


def deficiency_pairing(glued, kernel_vectors, basis, operator, threshold=1e-3):
    """M[k][w] = sum over active nodes of vol * (L_T w) * phi_k, scale-normalized"""
    kernel_vectors = np.asarray(kernel_vectors, dtype=float).reshape(-1, glued.size)
    if kernel_vectors.shape[0] == 0 or basis.dimension == 0:
        return PairingReport(np.zeros((kernel_vectors.shape[0], basis.dimension)), [], float("inf"), True)
    active = glued.status == ACTIVE
    vol = np.where(active, glued.volumes, 0.0)
    images = np.array([np.where(active, operator @ w, 0.0) for w in basis.fields])
    matrix = kernel_vectors @ (vol[:, None] * images.T)
    row_scale = np.sqrt(kernel_vectors ** 2 @ vol)
    col_scale = np.sqrt(images ** 2 @ vol)
    normalized = matrix / np.outer(np.where(row_scale > 0, row_scale, 1.0), np.where(col_scale > 0, col_scale, 1.0))
    singular = np.linalg.svd(normalized, compute_uv=False)
    smallest = float(singular[-1]) if min(normalized.shape) else float("inf")
    return PairingReport(matrix, [float(s) for s in singular], smallest, smallest > threshold)


def _system_for(config, delta, orbits, collar):
    glued = build_connected_sum(config, orbits)
    u_T = approximate_factor(glued)
    operator = assemble_linearization(glued, u_T.values)
    basis = deficiency_basis(glued, collar)
    w = make_weight(glued, delta)
    return glued, operator, basis, w


def _inverse_norm(config, delta, probes, seed, orbits, collar):
    glued, operator, basis, w = _system_for(config, delta, orbits, collar)
    system = BorderedSystem(glued, operator, basis, w)
    rng = np.random.default_rng(seed)
    volumes = glued.volumes
    ratios = []
    for f in random_probes(glued, probes, rng):
        solution = system.solve(f)
        size = weighted_norm(glued, w, solution.v, volumes) + float(np.linalg.norm(solution.coefficients))
        ratios.append(size / weighted_norm(glued, w, f, volumes))
    return float(max(ratios))


@dataclass
class NormScan:
    T: list
    norms: list
    plateau_ratio: float
    plateau: bool
    delta: float

    def to_record(self):
        return {
            "T": self.T,
            "norms": self.norms,
            "plateau_ratio": self.plateau_ratio,
            "plateau": self.plateau,
            "delta": self.delta,
        }


def right_inverse_norm_scan(config, T_list, delta, probes=8, seed=0, n_jobs=1, collar=1.0, tolerance=1.5):
    """Randomized estimate of the bordered inverse norm for each T"""
    orbits = [solve_orbit(s.n, s.eps) for s in config.summands]
    configs = [config.with_necks([T] * len(config.junctions)) for T in T_list]
    norms = Parallel(n_jobs=n_jobs)(
        delayed(_inverse_norm)(c, delta, probes, seed, orbits, collar) for c in configs
    )
    norms = [float(x) for x in norms]
    ratio = norms[-1] / norms[0]
    if ratio > tolerance:
        logger.warning(f"Inverse norms do not plateau: {norms}")
    return NormScan([float(T) for T in T_list], norms, float(ratio), bool(ratio <= tolerance), float(delta))


def _nondegeneracy_constant(config, delta, probes, seed, orbits, collar):
    glued, operator, _, w = _system_for(config, delta, orbits, collar)
    rng = np.random.default_rng(seed)
    volumes = glued.volumes
    ratios = []
    for phi in random_probes(glued, probes, rng):
        image = np.where(glued.status == ACTIVE, operator @ phi, 0.0)
        ratios.append(second_order_norm(glued, w, phi, volumes) / weighted_norm(glued, w, image, volumes))
    return float(max(ratios))


def nondegeneracy_constant_scan(config, T_list, delta, probes=20, seed=0, n_jobs=1, collar=1.0, tolerance=0.5):
    """C in ||phi||_(2,-delta) <= C ||L_T phi||_(0,-delta) over random probes, per T"""
    orbits = [solve_orbit(s.n, s.eps) for s in config.summands]
    configs = [config.with_necks([T] * len(config.junctions)) for T in T_list]
    constants = Parallel(n_jobs=n_jobs)(
        delayed(_nondegeneracy_constant)(c, delta, probes, seed, orbits, collar) for c in configs
    )
    constants = [float(x) for x in constants]
    spread = max(constants) / min(constants) - 1.0
    return {
        "T": [float(T) for T in T_list],
        "constants": constants,
        "spread": spread,
        "stable": bool(spread <= tolerance),
        "delta": float(delta),
    }
