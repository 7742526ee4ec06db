#!/usr/bin/env python3
# Exponential weights along the ends of a glued manifold

import logging
from dataclasses import dataclass, field

import numpy as np

from src.core.errors import AdmissibilityError, DomainError
from src.delaunay.modeline import fredholm_weights

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class WeightFunction:
    """alpha^delta on every node: 1 on the core and necks, e^(delta (sqrt(1 + tau^2) - 1)) on the ends.

    tau is the end coordinate in periods of the end's summand, so the growth
    per period is delta and is compared directly with the Floquet exponents.
    """
    delta: float
    values: np.ndarray = field(repr=False)
    bounds: list = field(default_factory=list)

    def apply(self, vector, power=1.0):
        return np.asarray(vector) * self.values ** power

    def norm(self, vector, volumes, mask=None):
        """Weighted discrete L2 norm of alpha^delta * vector"""
        terms = volumes * (self.values * np.asarray(vector)) ** 2
        if mask is not None:
            terms = terms[mask]
        return float(np.sqrt(np.sum(terms)))


def admissibility_bounds(glued):
    """delta_1 of every summand (delta_1 = P_eps, growth per period of the j = 1 modes)"""
    bounds = []
    for i, orbit in enumerate(glued.orbits):
        bounds.append((i, float(fredholm_weights(orbit, 1)[1])))
    return bounds


def check_admissible(glued, delta):
    if delta <= 0:
        raise DomainError("weight parameter delta must be positive")
    bounds = admissibility_bounds(glued)
    for summand, bound in bounds:
        if delta >= bound:
            raise AdmissibilityError(
                f"delta={delta} is not below delta_1={bound:.6f} of summand {summand}",
                summand=summand, delta=delta, bound=bound,
            )
    return bounds


def end_profile(glued, delta):
    """Per-node log of the weight, before exponentiation"""
    exponents = {p.name: np.zeros(p.chart.shape) for p in glued.patches}
    for end in glued.ends:
        body = glued.body(end.summand)
        T, _ = body.chart.mesh()
        tau = end.end_coordinate(T)
        past = tau > 0
        exponents[body.name] = np.where(past, delta * (np.sqrt(1.0 + tau ** 2) - 1.0), exponents[body.name])
    return glued.join(exponents)


def weight(glued, delta):
    bounds = check_admissible(glued, delta)
    values = np.exp(end_profile(glued, delta))
    logger.debug(f"Weight delta={delta}: max {values.max():.3e}, bounds {bounds}")
    return WeightFunction(delta=float(delta), values=values, bounds=bounds)


def unchecked_weight(glued, delta):
    """Weight without the admissibility test, for growth spaces (delta of either sign)"""
    return WeightFunction(delta=float(delta), values=np.exp(end_profile(glued, delta)), bounds=[])
