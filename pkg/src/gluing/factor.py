#!/usr/bin/env python3
# Background switch, approximate factor u_T and the gluing error f_T

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from src.core.errors import DomainError, NumericalError
from src.delaunay.fowler import solve_orbit
from src.geometry.conformal import yamabe_residual
from src.geometry.grids import DiscreteField
from src.geometry.transport import CylinderToEuclidean
from src.gluing.cutoffs import neck_cutoffs, ramp
from src.gluing.manifold import ACTIVE, body_chart, body_to_neck_map, build_connected_sum, flat_distance

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class GluedField:
    """A global field on a glued manifold, one block per chart"""
    manifold: object
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.manifold.size,):
            raise DomainError(f"glued field of size {self.values.shape} on a manifold of {self.manifold.size} nodes")

    def on(self, name):
        return self.manifold.fields(self.values)[name]

    def sup_norm(self, active_only=True):
        values = self.values[self.manifold.status == ACTIVE] if active_only else self.values
        return float(np.max(np.abs(values))) if values.size else 0.0

    def to_frame(self):
        frames = []
        for p in self.manifold.patches:
            S, TH = p.chart.mesh()
            ii, jj = np.meshgrid(np.arange(p.chart.shape[0]), np.arange(p.chart.shape[1]), indexing="ij")
            frames.append(pd.DataFrame({
                "chart": p.name,
                "i": ii.ravel(),
                "j": jj.ravel(),
                "s": S.ravel(),
                "theta": TH.ravel(),
                "value": self.values[p.slice],
            }))
        return pd.concat(frames, ignore_index=True)


@dataclass(eq=False)
class BackgroundSwitch:
    chart: object
    factor: np.ndarray = field(repr=False)
    cutoff: np.ndarray = field(repr=False)
    cylinder: np.ndarray = field(repr=False)
    distance: np.ndarray = field(repr=False)
    flat_factor: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)


def background_switch(config, index=0, point_index=0, orbit=None, coordinates=None):
    """Factor u_i with g_(i,c) = u_i^(-4/(n-2)) g_i a normalized cylinder inside B_alpha(p).

    u_i = rho + (1 - rho) ((n-2)/n)^((2-n)/4) r^((n-2)/2) v, where v is the flat
    factor of g_i near p and rho ramps from 0 at r = alpha to 1 at r = 2 alpha.
    Evaluated on the body chart, or at body coordinates (t, theta) when given;
    cylinder holds the unswitched branch, the factor of g_i over the normalized cylinder.
    """
    summand = config.summands[index]
    n = summand.n
    point = summand.points[point_index]
    orbit = orbit or solve_orbit(n, summand.eps)
    if coordinates is None:
        chart, _ = body_chart(config, index, orbit)
        T, TH = chart.mesh()
    else:
        chart = None
        T, TH = (np.asarray(c, dtype=float) for c in coordinates)
    r = flat_distance(T, TH, point)
    valid = r > 1e-12
    rho = ramp(r, summand.alpha, 2.0 * summand.alpha)
    u_eps, _ = orbit.evaluate(T)
    to_flat = CylinderToEuclidean(n, shift=point.t, orientation=1)
    v = u_eps / to_flat.weight(T, TH)
    cylinder = ((n - 2.0) / n) ** ((2.0 - n) / 4.0) * np.where(valid, r, 1.0) ** ((n - 2.0) / 2.0) * v
    factor = np.where(valid, rho + (1.0 - rho) * cylinder, 1.0)
    return BackgroundSwitch(chart, factor, rho, cylinder, r, v, valid)


def summand_factors_on_neck(glued, junction):
    """Factors of the two summand metrics relative to the neck background, and the neck cutoffs"""
    n = glued.n
    config = glued.config
    jn = config.junctions[junction]
    neck = glued.necks[junction]
    patch = glued.neck_patches[junction]
    S, PSI = patch.chart.mesh()
    factors = []
    for side, (i, pi) in enumerate(((jn.left, jn.left_point), (jn.right, jn.right_point))):
        point = config.summands[i].points[pi]
        to_body = body_to_neck_map(n, point, side, neck).inverse()
        switch = background_switch(config, i, pi, glued.orbits[i], coordinates=to_body(S, PSI))
        factors.append(switch.cylinder)
    chi_1, chi_2 = neck_cutoffs(S, neck.center, config.cutoff_width)
    return factors, (chi_1, chi_2)


def approximate_factor(glued):
    """u_T: the Delaunay factors on bodies, chi_1 u_1 + chi_2 u_2 on necks"""
    arrays = {}
    for p in glued.bodies:
        T, _ = p.chart.mesh()
        u_eps, _ = glued.orbits[p.index].evaluate(T)
        arrays[p.name] = u_eps
    for p in glued.neck_patches:
        (u1, u2), (chi_1, chi_2) = summand_factors_on_neck(glued, p.index)
        arrays[p.name] = chi_1 * u1 + chi_2 * u2
    values = glued.join(arrays)
    if not np.all(np.isfinite(values)) or np.min(values) <= 0:
        raise NumericalError("approximate factor u_T is not positive")
    return GluedField(glued, values)


def summand_defect(glued):
    """Discrete Yamabe residual of the exact summand factors, cutoff-weighted on necks.

    Zero in the continuum; on the grid it is the discretization defect that
    the gluing error and the corrected equation are measured against.
    """
    n = glued.n
    target = float(n * (n - 1))
    arrays = {}
    for p in glued.bodies:
        T, _ = p.chart.mesh()
        u_eps, _ = glued.orbits[p.index].evaluate(T)
        r = yamabe_residual(DiscreteField(p.chart, u_eps), p.descriptor, target, p.matrix).values
        arrays[p.name] = np.where(p.status == ACTIVE, r, 0.0)
    for p in glued.neck_patches:
        (u1, u2), (chi_1, chi_2) = summand_factors_on_neck(glued, p.index)
        r1 = yamabe_residual(DiscreteField(p.chart, u1), p.descriptor, target, p.matrix).values
        r2 = yamabe_residual(DiscreteField(p.chart, u2), p.descriptor, target, p.matrix).values
        arrays[p.name] = np.where(p.status == ACTIVE, chi_1 * r1 + chi_2 * r2, 0.0)
    return glued.join(arrays)


def error_field(glued, u_T=None):
    """f_T: residual of u_T minus the summand defect; vanishes identically on bodies"""
    if u_T is None:
        u_T = approximate_factor(glued)
    return GluedField(glued, glued.pde_residual(u_T.values) - summand_defect(glued))


def transition_zone_mask(glued, pad=None):
    """Nodes of neck charts inside the cutoff window (widened by pad, default one grid step)"""
    width = glued.config.cutoff_width
    arrays = {}
    for p in glued.patches:
        if p.role == "neck":
            neck = glued.necks[p.index]
            pad_s = p.chart.h_s if pad is None else pad
            S, _ = p.chart.mesh()
            arrays[p.name] = np.abs(S - neck.center) <= width + pad_s + 1e-12
        else:
            arrays[p.name] = np.zeros(p.chart.shape, dtype=bool)
    return glued.join(arrays).astype(bool)


def _neck_error_norm(config, orbits):
    glued = build_connected_sum(config, orbits)
    return error_field(glued).sup_norm()


@dataclass
class DecayScan:
    n: int
    T: list
    norms: list
    rate: float
    intercept: float
    r2: float
    monotone: bool
    stated_rate: float = -0.5
    tail_rate: float = 0.0

    def to_record(self):
        return {
            "n": self.n,
            "T": list(self.T),
            "f_norm": list(self.norms),
            "rate": self.rate,
            "intercept": self.intercept,
            "r2": self.r2,
            "monotone": self.monotone,
            "stated_rate": self.stated_rate,
            "tail_rate": self.tail_rate,
        }


def error_decay_scan(config, T_list, n_jobs=1):
    """Least-squares slope of log sup|f_T| against T, every junction set to the same T"""
    T_list = [float(T) for T in T_list]
    if len(T_list) < 4:
        raise DomainError("decay scan needs at least 4 neck parameters")
    orbits = [solve_orbit(s.n, s.eps) for s in config.summands]
    configs = [config.with_necks([T] * len(config.junctions)) for T in T_list]
    norms = Parallel(n_jobs=n_jobs)(delayed(_neck_error_norm)(c, orbits) for c in configs)
    norms = [float(x) for x in norms]
    if min(norms) <= 0:
        raise NumericalError("gluing error vanished; nothing to fit")
    x = np.array(T_list).reshape(-1, 1)
    y = np.log(norms)
    model = LinearRegression().fit(x, y)
    order = np.argsort(T_list)
    monotone = bool(np.all(np.diff(np.array(norms)[order]) < 0))
    if not monotone:
        logger.warning(f"Gluing error norms are not monotone in T: {norms}")
    n = config.n
    scan = DecayScan(
        n=n,
        T=T_list,
        norms=norms,
        rate=float(model.coef_[0]),
        intercept=float(model.intercept_),
        r2=float(r2_score(y, model.predict(x))),
        monotone=monotone,
        tail_rate=-(n - 2.0) / 4.0,
    )
    logger.info(f"Error decay rate {scan.rate:.4f} (tail estimate {scan.tail_rate:.4f}), R^2={scan.r2:.5f}")
    return scan


def measured_deviation_radius(glued, u_T=None, tol=1e-12):
    """Flat radius around each gluing point inside which g_T departs from the summand metric.

    Reports the constant c in radius = c * sqrt(eps_neck), eps_neck = e^(-T).
    """
    if u_T is None:
        u_T = approximate_factor(glued)
    fields = glued.fields(u_T.values)
    report = []
    for p in glued.neck_patches:
        neck = glued.necks[p.index]
        (u1, u2), _ = summand_factors_on_neck(glued, p.index)
        S, _ = p.chart.mesh()
        values = fields[p.name].values
        radii = []
        for side, u_i in enumerate((u1, u2)):
            t_i = S if side == 0 else neck.total - S
            deviates = np.abs(values - u_i) > tol * u_i
            radius = float(np.max(np.exp(-t_i[deviates]))) if np.any(deviates) else 0.0
            radii.append(radius)
        sqrt_eps = math.exp(-neck.T / 2.0)
        report.append({
            "junction": p.index,
            "T": neck.T,
            "radius": radii,
            "sqrt_eps": sqrt_eps,
            "c_estimate": [r / sqrt_eps for r in radii],
        })
    return report
