#!/usr/bin/env python3
# Conformal maps between meridian-plane charts and the transport of conformal factors
#
# Points are (s, theta) pairs in the meridian half-plane. A map F with
# F*g' = omega^(4/(n-2)) g carries a factor u on (M, g) to u' with u' o F = u / omega.

import math

import numpy as np

from src.core.errors import DomainError


def _exponent(n):
    return (n - 2.0) / 2.0


class ConformalMap:
    source = None
    target = None

    def __init__(self, n):
        self.n = n

    def forward(self, s, theta):
        raise NotImplementedError

    def weight(self, s, theta):
        raise NotImplementedError

    def inverse(self):
        raise NotImplementedError

    def __call__(self, s, theta):
        return self.forward(np.asarray(s, dtype=float), np.asarray(theta, dtype=float))

    def then(self, other):
        """Composition other o self"""
        return CompositeMap([self, other])

    def transport(self, s, theta, values):
        """Push point data forward; returns (s', theta', values / omega)"""
        s = np.asarray(s, dtype=float)
        theta = np.asarray(theta, dtype=float)
        s2, th2 = self.forward(s, theta)
        return s2, th2, np.asarray(values, dtype=float) / self.weight(s, theta)

    def pull_factor(self, factor):
        """Factor on the target as a callable, given a callable factor on the source"""
        inverse = self.inverse()

        def transported(s, theta):
            s0, th0 = inverse(s, theta)
            return factor(s0, th0) / self.weight(s0, th0)

        return transported


class CompositeMap(ConformalMap):
    def __init__(self, maps):
        super().__init__(maps[0].n)
        self.maps = list(maps)
        self.source = self.maps[0].source
        self.target = self.maps[-1].target

    def forward(self, s, theta):
        for m in self.maps:
            s, theta = m.forward(s, theta)
        return s, theta

    def weight(self, s, theta):
        total = np.ones(np.broadcast(np.asarray(s), np.asarray(theta)).shape)
        for m in self.maps:
            total = total * m.weight(s, theta)
            s, theta = m.forward(s, theta)
        return total

    def inverse(self):
        return CompositeMap([m.inverse() for m in reversed(self.maps)])


class CylinderToEuclidean(ConformalMap):
    """(t, theta) -> polar radius r = exp(orientation (t - shift))"""
    source = "cylinder"
    target = "euclidean_polar"

    def __init__(self, n, shift=0.0, orientation=-1):
        super().__init__(n)
        self.shift = shift
        self.orientation = orientation

    def forward(self, s, theta):
        return np.exp(self.orientation * (s - self.shift)), theta

    def weight(self, s, theta):
        r = np.exp(self.orientation * (s - self.shift))
        return r ** _exponent(self.n)

    def inverse(self):
        return EuclideanToCylinder(self.n, shift=self.shift, orientation=self.orientation)


class EuclideanToCylinder(ConformalMap):
    """Polar radius r -> t with r = exp(orientation (t - shift)), onto scale * (dt^2 + dtheta^2)"""
    source = "euclidean_polar"
    target = "cylinder"

    def __init__(self, n, shift=0.0, orientation=-1, scale=1.0):
        super().__init__(n)
        self.shift = shift
        self.orientation = orientation
        self.scale = scale

    def _radius(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise DomainError("point at the puncture of the cylinder map")
        return s

    def forward(self, s, theta):
        r = self._radius(s)
        return self.shift + self.orientation * np.log(r), theta

    def weight(self, s, theta):
        r = self._radius(s)
        return (self.scale / r ** 2) ** ((self.n - 2.0) / 4.0)

    def inverse(self):
        if self.scale != 1.0:
            return _ScaledCylinderToEuclidean(self)
        return CylinderToEuclidean(self.n, shift=self.shift, orientation=self.orientation)


class _ScaledCylinderToEuclidean(ConformalMap):
    source = "cylinder"
    target = "euclidean_polar"

    def __init__(self, parent):
        super().__init__(parent.n)
        self.parent = parent

    def forward(self, s, theta):
        return np.exp(self.parent.orientation * (s - self.parent.shift)), theta

    def weight(self, s, theta):
        r, th = self.forward(s, theta)
        return 1.0 / self.parent.weight(r, th)

    def inverse(self):
        return self.parent


class EuclideanToSphere(ConformalMap):
    """Inverse stereographic projection: r -> polar distance 2 arctan r from the south pole"""
    source = "euclidean_polar"
    target = "sphere_polar"

    def forward(self, s, theta):
        return 2.0 * np.arctan(s), theta

    def weight(self, s, theta):
        return (2.0 / (1.0 + np.asarray(s, dtype=float) ** 2)) ** _exponent(self.n)

    def inverse(self):
        return SphereToEuclidean(self.n)


class SphereToEuclidean(ConformalMap):
    source = "sphere_polar"
    target = "euclidean_polar"

    def forward(self, s, theta):
        s = np.asarray(s, dtype=float)
        if np.any(s >= math.pi):
            raise DomainError("point at the projection pole")
        return np.tan(s / 2.0), theta

    def weight(self, s, theta):
        r, _ = self.forward(s, theta)
        return ((1.0 + r ** 2) / 2.0) ** _exponent(self.n)

    def inverse(self):
        return EuclideanToSphere(self.n)


class Recenter(ConformalMap):
    """Euclidean isometry: polar coordinates about 0 -> polar coordinates about sigma * e_axis.

    The new polar angle is measured from the direction sigma * e_axis.
    """
    source = "euclidean_polar"
    target = "euclidean_polar"

    def __init__(self, n, sigma=1.0):
        super().__init__(n)
        self.sigma = float(sigma)

    def forward(self, s, theta):
        axial = s * np.cos(theta) - self.sigma
        perp = s * np.sin(theta)
        return np.hypot(axial, perp), np.arctan2(perp, self.sigma * axial)

    def weight(self, s, theta):
        return np.ones(np.broadcast(np.asarray(s), np.asarray(theta)).shape)

    def inverse(self):
        return _Uncenter(self)


class _Uncenter(ConformalMap):
    source = "euclidean_polar"
    target = "euclidean_polar"

    def __init__(self, parent):
        super().__init__(parent.n)
        self.parent = parent

    def forward(self, s, theta):
        sigma = self.parent.sigma
        axial = sigma * (1.0 + s * np.cos(theta))
        perp = s * np.sin(theta)
        return np.hypot(axial, perp), np.arctan2(perp, axial)

    def weight(self, s, theta):
        return np.ones(np.broadcast(np.asarray(s), np.asarray(theta)).shape)

    def inverse(self):
        return self.parent


TRANSPORT_DIRECTIONS = (
    "cylinder_to_euclidean",
    "euclidean_to_cylinder",
    "euclidean_to_sphere",
    "sphere_to_euclidean",
    "cylinder_to_sphere",
    "sphere_to_cylinder",
)


def transport_map(n, direction):
    if direction == "cylinder_to_euclidean":
        return CylinderToEuclidean(n)
    if direction == "euclidean_to_cylinder":
        return EuclideanToCylinder(n)
    if direction == "euclidean_to_sphere":
        return EuclideanToSphere(n)
    if direction == "sphere_to_euclidean":
        return SphereToEuclidean(n)
    if direction == "cylinder_to_sphere":
        return CylinderToEuclidean(n).then(EuclideanToSphere(n))
    if direction == "sphere_to_cylinder":
        return SphereToEuclidean(n).then(EuclideanToCylinder(n))
    raise DomainError(f"unknown transport direction {direction}; expected one of {TRANSPORT_DIRECTIONS}")


def cylinder_sphere_transport(n, direction, s, theta, values):
    """Transport point data of a conformal factor; returns (s', theta', values')"""
    return transport_map(n, direction).transport(s, theta, values)


class CylinderReflection(ConformalMap):
    """Isometry t -> total - t of a cylinder"""
    source = "cylinder"
    target = "cylinder"

    def __init__(self, n, total):
        super().__init__(n)
        self.total = float(total)

    def forward(self, s, theta):
        return self.total - np.asarray(s, dtype=float), theta

    def weight(self, s, theta):
        return np.ones(np.broadcast(np.asarray(s), np.asarray(theta)).shape)

    def inverse(self):
        return self
