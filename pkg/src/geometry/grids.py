#!/usr/bin/env python3
# Axisymmetric charts, background metrics and discrete fields
#
# Every chart is a tensor grid in (s, theta): s is a length coordinate of a
# warped product c * (ds^2 + w(s)^2 dtheta^2) over S^(n-1), theta is the polar
# angle on S^(n-1) and both theta poles are grid nodes. Fields are invariant
# under the SO(n-1) fixing the polar axis.

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad

from src.core.errors import DomainError

CYLINDER = "cylinder"
SPHERE_POLAR = "sphere_polar"
EUCLIDEAN_POLAR = "euclidean_polar"
CHART_KINDS = (CYLINDER, SPHERE_POLAR, EUCLIDEAN_POLAR)

CYLINDER_NORMALIZED = "cylinder_normalized"
CYLINDER_PRODUCT = "cylinder_product"
ROUND_SPHERE = "round_sphere"
EUCLIDEAN = "euclidean"

_COMPATIBLE = {
    CYLINDER_NORMALIZED: CYLINDER,
    CYLINDER_PRODUCT: CYLINDER,
    ROUND_SPHERE: SPHERE_POLAR,
    EUCLIDEAN: EUCLIDEAN_POLAR,
}


@dataclass(frozen=True)
class MetricDescriptor:
    """Background metric of a chart with closed-form scalar curvature"""
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in _COMPATIBLE:
            raise DomainError(f"unknown metric descriptor {self.kind}")
        if self.n < 3:
            raise DomainError("dimension must be >= 3")

    @property
    def scale(self):
        """Constant c in c * (ds^2 + w^2 dtheta^2)"""
        return (self.n - 2.0) / self.n if self.kind == CYLINDER_NORMALIZED else 1.0

    @property
    def scalar_curvature(self):
        n = self.n
        if self.kind == CYLINDER_PRODUCT:
            return float((n - 1) * (n - 2))
        if self.kind == EUCLIDEAN:
            return 0.0
        return float(n * (n - 1))

    @property
    def chart_kind(self):
        return _COMPATIBLE[self.kind]


@dataclass(frozen=True)
class Chart:
    kind: str
    s_range: tuple
    shape: tuple
    name: str = ""

    def __post_init__(self):
        if self.kind not in CHART_KINDS:
            raise DomainError(f"unknown chart kind {self.kind}")
        s0, s1 = self.s_range
        ns, nt = self.shape
        if not (s1 > s0 and ns >= 3 and nt >= 3):
            raise DomainError(f"degenerate chart {self.name}: range {self.s_range}, shape {self.shape}")
        if self.kind == EUCLIDEAN_POLAR and s0 <= 0:
            raise DomainError("euclidean polar charts must avoid the origin")
        if self.kind == SPHERE_POLAR and (s0 <= 0 or s1 >= math.pi):
            raise DomainError("sphere polar charts must avoid both poles")

    @property
    def s(self):
        return np.linspace(self.s_range[0], self.s_range[1], self.shape[0])

    @property
    def theta(self):
        return np.linspace(0.0, math.pi, self.shape[1])

    @property
    def h_s(self):
        return (self.s_range[1] - self.s_range[0]) / (self.shape[0] - 1)

    @property
    def h_theta(self):
        return math.pi / (self.shape[1] - 1)

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    def mesh(self):
        return np.meshgrid(self.s, self.theta, indexing="ij")

    def warp(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == CYLINDER:
            return np.ones_like(s)
        if self.kind == EUCLIDEAN_POLAR:
            return s
        return np.sin(s)

    def interior_mask(self):
        """Nodes where the chart operator is defined (all but the s ends)"""
        mask = np.ones(self.shape, dtype=bool)
        mask[0, :] = False
        mask[-1, :] = False
        return mask

    def refined(self):
        ns, nt = self.shape
        return Chart(self.kind, self.s_range, (2 * ns - 1, 2 * nt - 1), self.name)

    def header(self):
        return {"kind": self.kind, "s_range": list(self.s_range), "shape": list(self.shape), "name": self.name}


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """SO(n-1)-invariant scalar field sampled on a chart"""
    chart: Chart
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.chart.shape:
            raise DomainError(f"field shape {values.shape} does not match chart {self.chart.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, chart, func):
        S, TH = chart.mesh()
        return cls(chart, np.broadcast_to(func(S, TH), chart.shape))

    def with_values(self, values):
        return DiscreteField(self.chart, values)

    def sup_norm(self, mask=None):
        values = self.values if mask is None else self.values[mask]
        return float(np.max(np.abs(values))) if values.size else 0.0

    def flat(self):
        return self.values.ravel()


def check_pair(chart, descriptor):
    if descriptor.chart_kind != chart.kind:
        raise DomainError(f"descriptor {descriptor.kind} is not supported on a {chart.kind} chart")


def theta_volumes(n, theta):
    """Dual-cell measures of sin^(n-2) on the theta grid, exact at the poles"""
    h = theta[1] - theta[0]
    k = n - 2
    vol = h * np.sin(theta) ** k
    pole = quad(lambda x: math.sin(x) ** k, 0.0, h / 2)[0]
    vol[0] = pole
    vol[-1] = pole
    return vol


def volume_weights(chart, descriptor):
    """Cell volumes of the discrete inner product (up to the S^(n-1) area)"""
    n = descriptor.n
    ws = chart.warp(chart.s) ** (n - 1)
    vt = theta_volumes(n, chart.theta)
    return descriptor.scale ** (n / 2.0) * chart.h_s * np.outer(ws, vt)


def laplacian_matrix(chart, descriptor):
    """Sparse finite-volume Laplace-Beltrami operator; rows at the s ends are zero.

    Conservative in both directions, so it is symmetric in the inner product
    of volume_weights for fields vanishing near the s ends.
    """
    check_pair(chart, descriptor)
    n = descriptor.n
    ns, nt = chart.shape
    s, theta = chart.s, chart.theta
    hs, ht = chart.h_s, chart.h_theta
    m = n - 1
    w_node = chart.warp(s)
    w_half = chart.warp(0.5 * (s[1:] + s[:-1]))
    a_half = np.sin(0.5 * (theta[1:] + theta[:-1])) ** (n - 2)
    v_theta = theta_volumes(n, theta)
    inv_c = 1.0 / descriptor.scale

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    index = np.arange(ns * nt).reshape(ns, nt)
    for i in range(1, ns - 1):
        ws_m = w_node[i] ** m
        left = w_half[i - 1] ** m / (ws_m * hs * hs) * inv_c
        right = w_half[i] ** m / (ws_m * hs * hs) * inv_c
        ang = inv_c / (w_node[i] ** 2 * ht)
        for j in range(nt):
            r = index[i, j]
            add(r, index[i - 1, j], left)
            add(r, index[i + 1, j], right)
            diag = -(left + right)
            if j > 0:
                c = ang * a_half[j - 1] / v_theta[j]
                add(r, index[i, j - 1], c)
                diag -= c
            if j < nt - 1:
                c = ang * a_half[j] / v_theta[j]
                add(r, index[i, j + 1], c)
                diag -= c
            add(r, r, diag)
    return sp.csr_matrix((vals, (rows, cols)), shape=(ns * nt, ns * nt))


def gradient_dot(chart, descriptor, a, b):
    """g(grad a, grad b) by central differences; zero on the s ends"""
    check_pair(chart, descriptor)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    hs, ht = chart.h_s, chart.h_theta

    def d_s(f):
        out = np.zeros_like(f)
        out[1:-1] = (f[2:] - f[:-2]) / (2 * hs)
        return out

    def d_theta(f):
        out = np.zeros_like(f)
        out[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2 * ht)
        return out

    w = chart.warp(chart.s)[:, None]
    value = (d_s(a) * d_s(b) + d_theta(a) * d_theta(b) / w ** 2) / descriptor.scale
    value[0, :] = 0.0
    value[-1, :] = 0.0
    return value
