#!/usr/bin/env python3
# Overset discretization of a connected sum of Delaunay summands
#
# Each summand is a body chart in its own cylinder coordinates (t, theta) with
# the product background, a hole cut around every gluing point. Each junction
# is a neck chart (s, psi) in normalized cylinder coordinates of the first
# summand, s = t_1. Body nodes next to a hole and the two end columns of a neck
# are interpolated from the other chart, with the conformal weight of the
# transition map converting factors between backgrounds.

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from src.core.errors import ConfigError, NumericalError
from src.delaunay.fowler import solve_orbit
from src.geometry.conformal import yamabe_residual
from src.geometry.grids import (
    CYLINDER,
    CYLINDER_NORMALIZED,
    CYLINDER_PRODUCT,
    Chart,
    DiscreteField,
    MetricDescriptor,
    laplacian_matrix,
    volume_weights,
)
from src.geometry.transport import (
    CylinderReflection,
    CylinderToEuclidean,
    EuclideanToCylinder,
    Recenter,
)
from src.gluing.config import HOLE_FACTOR

logger = logging.getLogger(__name__)

ACTIVE, DIRICHLET, HOLE, FRINGE = 0, 1, 2, 3

# neck chart reaches flat radius 2 alpha e^(1/4), see NECK_REACH
NECK_OVERHANG = math.log(2.0)


@dataclass(eq=False)
class Patch:
    name: str
    role: str
    index: int
    chart: Chart
    descriptor: MetricDescriptor
    offset: int
    status: np.ndarray = field(repr=False)
    matrix: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.matrix is None:
            self.matrix = laplacian_matrix(self.chart, self.descriptor)

    @property
    def size(self):
        return self.chart.size

    @property
    def slice(self):
        return slice(self.offset, self.offset + self.size)


@dataclass(frozen=True)
class End:
    summand: int
    sign: int
    core_edge: float
    far_edge: float
    period: float
    designated: bool

    @property
    def label(self):
        return f"{self.summand}{'+' if self.sign > 0 else '-'}"

    def end_coordinate(self, t):
        """Distance past the core edge along the end, in periods; negative inside the core"""
        return self.sign * (np.asarray(t, dtype=float) - self.core_edge) / self.period


@dataclass(frozen=True)
class NeckGeometry:
    junction: int
    A1: float
    A2: float
    T: float

    @property
    def total(self):
        return self.A1 + self.A2 + self.T

    @property
    def center(self):
        return self.A1 + self.T / 2.0

    @property
    def s_range(self):
        return (self.A1 - NECK_OVERHANG - 0.25, self.A1 + self.T + NECK_OVERHANG + 0.25)


def _grid_count(length, h):
    return max(int(round(length / h)), 2) + 1


def flat_distance(t, theta, point):
    """Euclidean distance to the gluing point in the flat chart x = e^(t - t_p) theta"""
    radius = np.exp(np.asarray(t, dtype=float) - point.t)
    axial = radius * np.cos(theta) - point.sigma
    perp = radius * np.sin(theta)
    return np.hypot(axial, perp)


def body_to_neck_map(n, point, side, neck):
    """Body cylinder coordinates near the gluing point -> neck coordinates"""
    scale = (n - 2.0) / n
    m = (
        CylinderToEuclidean(n, shift=point.t, orientation=1)
        .then(Recenter(n, point.sigma))
        .then(EuclideanToCylinder(n, shift=0.0, orientation=-1, scale=scale))
    )
    if side == 1:
        m = m.then(CylinderReflection(n, neck.total))
    return m


def _bilinear(chart, s, theta):
    """Donor nodes (row-major indices) and weights of bilinear interpolation"""
    ns, nt = chart.shape
    s0, s1 = chart.s_range
    tol = 1e-9 * (s1 - s0)
    if np.any(s < s0 - tol) or np.any(s > s1 + tol):
        raise NumericalError(f"interpolation point outside chart {chart.name}")
    x = np.clip((s - s0) / chart.h_s, 0.0, ns - 1.0)
    y = np.clip(theta / chart.h_theta, 0.0, nt - 1.0)
    i0 = np.minimum(np.floor(x).astype(int), ns - 2)
    j0 = np.minimum(np.floor(y).astype(int), nt - 2)
    fx = x - i0
    fy = y - j0
    idx = np.stack([i0 * nt + j0, (i0 + 1) * nt + j0, i0 * nt + j0 + 1, (i0 + 1) * nt + j0 + 1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return idx, w


@dataclass(eq=False)
class GluedManifold:
    config: object
    orbits: list
    patches: list
    ends: list
    necks: list
    interpolation: object = field(repr=False)
    overlap_checks: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return self.config.n

    @property
    def size(self):
        last = self.patches[-1]
        return last.offset + last.size

    @property
    def bodies(self):
        return [p for p in self.patches if p.role == "body"]

    @property
    def neck_patches(self):
        return [p for p in self.patches if p.role == "neck"]

    def body(self, index):
        return self.bodies[index]

    @property
    def status(self):
        return np.concatenate([p.status.ravel() for p in self.patches])

    @property
    def laplacian(self):
        return sp.block_diag([p.matrix for p in self.patches], format="csr")

    @property
    def volumes(self):
        return np.concatenate([volume_weights(p.chart, p.descriptor).ravel() for p in self.patches])

    def coordinates(self):
        s, th = [], []
        for p in self.patches:
            S, TH = p.chart.mesh()
            s.append(S.ravel())
            th.append(TH.ravel())
        return np.concatenate(s), np.concatenate(th)

    def split(self, vector):
        vector = np.asarray(vector, dtype=float)
        return {p.name: vector[p.slice].reshape(p.chart.shape) for p in self.patches}

    def fields(self, vector):
        return {p.name: DiscreteField(p.chart, v) for p, v in zip(self.patches, self.split(vector).values())}

    def join(self, arrays):
        return np.concatenate([np.asarray(arrays[p.name], dtype=float).ravel() for p in self.patches])

    def pde_residual(self, factor, target_R=None):
        """Yamabe residual of a global factor at active nodes, zero elsewhere"""
        target_R = float(self.n * (self.n - 1)) if target_R is None else target_R
        out = np.zeros(self.size)
        for p in self.patches:
            u = DiscreteField(p.chart, np.asarray(factor[p.slice]).reshape(p.chart.shape))
            res = yamabe_residual(u, p.descriptor, target_R, p.matrix).values.ravel()
            active = p.status.ravel() == ACTIVE
            out[p.slice][active] = res[active]
        return out

    def interpolation_defect(self, vector):
        vector = np.asarray(vector, dtype=float)
        fringe = self.status == FRINGE
        out = np.zeros(self.size)
        out[fringe] = vector[fringe] - (self.interpolation @ vector)[fringe]
        return out

    def overlap_isometry_defect(self):
        """Max relative gap between transition weights and the closed-form metric ratio"""
        if not self.overlap_checks:
            return 0.0
        return float(max(np.max(np.abs(c)) for c in self.overlap_checks))

    def summary(self):
        return {
            "n": self.n,
            "unknowns": self.size,
            "patches": [
                {
                    "name": p.name,
                    "role": p.role,
                    "shape": list(p.chart.shape),
                    "s_range": list(p.chart.s_range),
                    "fringe": int(np.sum(p.status == FRINGE)),
                    "hole": int(np.sum(p.status == HOLE)),
                }
                for p in self.patches
            ],
            "ends": [e.label for e in self.ends],
            "designated_ends": [e.label for e in self.ends if e.designated],
        }


def _used_points(config):
    used = {i: [] for i in range(len(config.summands))}
    for k, jn in enumerate(config.junctions):
        used[jn.left].append((jn.left_point, k, 0))
        used[jn.right].append((jn.right_point, k, 1))
    return used


def body_chart(config, index, orbit):
    summand = config.summands[index]
    grid = config.grid
    ts = [p.t for p in summand.points] or [0.0]
    core = (min(ts) - grid.margin, max(ts) + grid.margin)
    length = grid.end_periods * orbit.period
    s_range = (core[0] - length, core[1] + length)
    shape = (_grid_count(s_range[1] - s_range[0], grid.h_body), grid.n_theta)
    return Chart(CYLINDER, s_range, shape, name=f"body{index}"), core


def build_connected_sum(config, orbits=None):
    n = config.n
    if orbits is None:
        orbits = [solve_orbit(n, s.eps) for s in config.summands]
    for s, orbit in zip(config.summands, orbits):
        s.check_points(orbit.period)

    necks = []
    for k, jn in enumerate(config.junctions):
        a1 = -math.log(config.summands[jn.left].alpha)
        a2 = -math.log(config.summands[jn.right].alpha)
        necks.append(NeckGeometry(k, a1, a2, jn.T))

    used = _used_points(config)
    patches, ends, offset = [], [], 0
    body_fringe = []
    product = MetricDescriptor(CYLINDER_PRODUCT, n)
    normalized = MetricDescriptor(CYLINDER_NORMALIZED, n)

    for i, (summand, orbit) in enumerate(zip(config.summands, orbits)):
        chart, core = body_chart(config, i, orbit)
        status = np.full(chart.shape, ACTIVE, dtype=int)
        T, TH = chart.mesh()
        holes = []
        for point_index, k, side in used[i]:
            point = summand.points[point_index]
            hole = flat_distance(T, TH, point) < summand.alpha * HOLE_FACTOR
            if not np.any(hole):
                raise ConfigError(f"grid too coarse to resolve the gluing ball of summand {i}")
            holes.append((hole, point, k, side))
            status[hole] = HOLE
        status[0, :] = DIRICHLET
        status[-1, :] = DIRICHLET
        for hole, point, k, side in holes:
            near = np.zeros_like(hole)
            near[1:, :] |= hole[:-1, :]
            near[:-1, :] |= hole[1:, :]
            near[:, 1:] |= hole[:, :-1]
            near[:, :-1] |= hole[:, 1:]
            fringe = near & (status == ACTIVE)
            status[fringe] = FRINGE
            body_fringe.append((i, fringe, point, k, side))
        patch = Patch(f"body{i}", "body", i, chart, product, offset, status)
        patches.append(patch)
        offset += patch.size
        for sign, edge, far in ((-1, core[0], chart.s_range[0]), (1, core[1], chart.s_range[1])):
            designated = summand.deficiency_end == ("+" if sign > 0 else "-")
            ends.append(End(i, sign, edge, far, orbit.period, designated))

    for neck in necks:
        s_range = neck.s_range
        shape = (_grid_count(s_range[1] - s_range[0], config.grid.h_neck), config.grid.n_psi)
        chart = Chart(CYLINDER, s_range, shape, name=f"neck{neck.junction}")
        status = np.full(chart.shape, ACTIVE, dtype=int)
        status[0, :] = FRINGE
        status[-1, :] = FRINGE
        patch = Patch(f"neck{neck.junction}", "neck", neck.junction, chart, normalized, offset, status)
        patches.append(patch)
        offset += patch.size

    glued = GluedManifold(config, list(orbits), patches, ends, necks, None)
    glued.interpolation = _interpolation(glued, body_fringe)
    logger.info(
        f"Built connected sum: {len(config.summands)} summands, {len(necks)} necks, {glued.size} unknowns"
    )
    return glued


def _metric_ratio(n, t, theta, point):
    """((n-2)/n) |x|^2 / rho^2: normalized neck metric over the product body metric"""
    radius = np.exp(t - point.t)
    rho = flat_distance(t, theta, point)
    return (n - 2.0) / n * radius ** 2 / rho ** 2


def _interpolation(glued, body_fringe):
    n = glued.n
    config = glued.config
    rows, cols, vals = [], [], []
    necks = {p.index: p for p in glued.neck_patches}
    bodies = glued.bodies

    def add_rows(source, targets, dest, mapping, ratio):
        S, TH = source.chart.mesh()
        s, th = S.ravel()[targets], TH.ravel()[targets]
        s2, th2 = mapping(s, th)
        omega = mapping.weight(s, th)
        glued.overlap_checks.append(omega ** (4.0 / (n - 2.0)) / ratio(s, th) - 1.0)
        idx, w = _bilinear(dest.chart, s2, th2)
        donors = dest.status.ravel()[idx]
        if np.any(donors != ACTIVE):
            raise NumericalError(
                f"overset donors of {source.name} in {dest.name} are not active; refine the grid or reduce alpha"
            )
        for r, node in enumerate(targets):
            for c in range(4):
                rows.append(source.offset + node)
                cols.append(dest.offset + idx[r, c])
                vals.append(omega[r] * w[r, c])

    for i, fringe, point, k, side in body_fringe:
        source = bodies[i]
        neck = glued.necks[k]
        mapping = body_to_neck_map(n, point, side, neck)
        targets = np.flatnonzero(fringe.ravel())
        add_rows(source, targets, necks[k], mapping, lambda s, th, p=point: _metric_ratio(n, s, th, p))

    for k, jn in enumerate(config.junctions):
        neck_patch = necks[k]
        ns, nt = neck_patch.chart.shape
        for side, column, summand_index, point_index in (
            (0, 0, jn.left, jn.left_point),
            (1, ns - 1, jn.right, jn.right_point),
        ):
            point = config.summands[summand_index].points[point_index]
            mapping = body_to_neck_map(n, point, side, glued.necks[k]).inverse()
            targets = column * nt + np.arange(nt)

            def ratio(s, th, m=mapping, p=point):
                t, theta = m(s, th)
                return 1.0 / _metric_ratio(n, t, theta, p)

            add_rows(neck_patch, targets, bodies[summand_index], mapping, ratio)

    size = glued.size
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
