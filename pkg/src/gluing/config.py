#!/usr/bin/env python3
# Summands, junctions and gluing configurations

import math
from dataclasses import dataclass, field, replace

from src.core.errors import ConfigError

# body fringe sits at alpha * e^(-1/2), neck fringe at 2 alpha * e^(1/4)
HOLE_FACTOR = math.exp(-0.5)
NECK_REACH = 2.0 * math.exp(0.25)
MAX_NECK_RADIUS = 0.6


@dataclass(frozen=True)
class GluingPoint:
    t: float
    theta: float = 0.0

    def __post_init__(self):
        if not (abs(self.theta) < 1e-12 or abs(self.theta - math.pi) < 1e-12):
            raise ConfigError(f"gluing point polar angle must be 0 or pi, got {self.theta}")

    @property
    def sigma(self):
        return 1.0 if abs(self.theta) < 1e-12 else -1.0


@dataclass(frozen=True)
class SummandSpec:
    n: int
    eps: float
    gluing_point: GluingPoint
    alpha: float = 0.2
    deficiency_end: str = "+"
    extra_points: tuple = ()

    def __post_init__(self):
        if self.deficiency_end not in ("+", "-", None):
            raise ConfigError(f"deficiency_end must be '+', '-' or null, got {self.deficiency_end}")
        if not (0.0 < self.alpha and NECK_REACH * self.alpha <= MAX_NECK_RADIUS):
            raise ConfigError(
                f"alpha={self.alpha} outside (0, {MAX_NECK_RADIUS / NECK_REACH:.4f}]; the neck collar would leave the flat chart"
            )

    @property
    def points(self):
        return (self.gluing_point,) + tuple(self.extra_points)

    def check_points(self, period):
        if self.alpha > period / 4.0:
            raise ConfigError(f"alpha={self.alpha} exceeds a quarter of the period {period:.4f}")
        reach = -math.log(1.0 - NECK_REACH * self.alpha) + math.log(1.0 + NECK_REACH * self.alpha)
        pts = self.points
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                same_side = pts[a].sigma == pts[b].sigma
                if same_side and abs(pts[a].t - pts[b].t) < reach:
                    raise ConfigError(
                        f"gluing balls around t={pts[a].t} and t={pts[b].t} overlap on one summand"
                    )


@dataclass(frozen=True)
class Junction:
    left: int
    right: int
    left_point: int
    right_point: int
    T: float


@dataclass(frozen=True)
class GridResolution:
    h_body: float = 0.1
    n_theta: int = 41
    h_neck: float = 0.1
    n_psi: int = 41
    end_periods: float = 4.0
    margin: float = 1.0


def check_overlap_resolution(summand, grid):
    """Body and neck spacings must leave active donors on both sides of the overlap annulus.

    Flat distances near a gluing point stretch cylinder spacings by at most
    1 + reach + diagonal.
    """
    alpha = summand.alpha
    hole = HOLE_FACTOR * alpha
    reach = NECK_REACH * alpha
    h_theta = math.pi / (grid.n_theta - 1)
    diagonal = math.hypot(grid.h_body, h_theta)
    stretch = 1.0 + reach + diagonal
    step = stretch * max(grid.h_body, h_theta)
    if hole <= 0.5 * (1.0 + hole) * diagonal:
        raise ConfigError(f"body grid (h={grid.h_body}, n_theta={grid.n_theta}) cannot resolve a gluing ball of alpha={alpha}")
    if hole + step >= reach * math.exp(-grid.h_neck):
        raise ConfigError(f"neck spacing h_neck={grid.h_neck} leaves no active neck donors for alpha={alpha}")
    if reach - hole <= step + stretch * diagonal:
        raise ConfigError(
            f"body grid (h={grid.h_body}, n_theta={grid.n_theta}) is too coarse for the overlap annulus of alpha={alpha}"
        )


@dataclass(frozen=True)
class GluingConfig:
    summands: tuple
    neck_parameters: tuple = ()
    cutoff_width: float = 1.0
    grid: GridResolution = field(default_factory=GridResolution)
    junctions: tuple = None

    def __post_init__(self):
        summands = tuple(self.summands)
        object.__setattr__(self, "summands", summands)
        object.__setattr__(self, "neck_parameters", tuple(float(T) for T in self.neck_parameters))
        if not summands:
            raise ConfigError("a gluing configuration needs at least one summand")
        dims = {s.n for s in summands}
        if len(dims) != 1:
            raise ConfigError(f"summands of different dimensions {sorted(dims)}")
        if self.junctions is None:
            object.__setattr__(self, "junctions", self._chain_junctions())
        if len(self.junctions) != len(self.neck_parameters):
            raise ConfigError(
                f"{len(self.junctions)} junctions need as many neck parameters, got {len(self.neck_parameters)}"
            )
        for T in self.neck_parameters:
            if T <= 2.0 * (self.cutoff_width + 1.0):
                raise ConfigError(f"neck parameter T={T} must exceed 2 * (cutoff_width + 1)")
        used = set()
        for jn in self.junctions:
            for key in ((jn.left, jn.left_point), (jn.right, jn.right_point)):
                if key in used:
                    raise ConfigError(f"gluing point {key[1]} of summand {key[0]} used twice")
                if key[0] >= len(summands) or key[1] >= len(summands[key[0]].points):
                    raise ConfigError(f"junction refers to a missing gluing point {key}")
                used.add(key)
        for index in sorted({key[0] for key in used}):
            check_overlap_resolution(summands[index], self.grid)

    def _chain_junctions(self):
        count = len(self.summands)
        if len(self.neck_parameters) != count - 1:
            raise ConfigError(f"a chain of {count} summands needs {count - 1} neck parameters")
        junctions = []
        for k in range(count - 1):
            right = self.summands[k + 1]
            right_point = 1 if len(right.points) > 1 else 0
            junctions.append(Junction(k, k + 1, 0, right_point, self.neck_parameters[k]))
        return tuple(junctions)

    @property
    def n(self):
        return self.summands[0].n

    def with_necks(self, neck_parameters):
        neck_parameters = tuple(float(T) for T in neck_parameters)
        junctions = tuple(replace(jn, T=T) for jn, T in zip(self.junctions, neck_parameters))
        return replace(self, neck_parameters=neck_parameters, junctions=junctions)

    def with_grid(self, **changes):
        return replace(self, grid=replace(self.grid, **changes))

    def to_dict(self):
        return {
            "n": self.n,
            "summands": [
                {
                    "eps": s.eps,
                    "gluing_point": [s.gluing_point.t, s.gluing_point.theta],
                    "extra_points": [[p.t, p.theta] for p in s.extra_points],
                    "alpha": s.alpha,
                    "deficiency_end": s.deficiency_end,
                }
                for s in self.summands
            ],
            "T": list(self.neck_parameters),
            "cutoff_width": self.cutoff_width,
            "grids": self.grid.__dict__.copy(),
        }


def chain_config(summands, T_list, cutoff_width=1.0, grid=None):
    """Iterated sum M_1 # M_2 # ... # M_N, junction k gluing p_k^+ to p_(k+1)^-.

    Middle summands without an incoming point get one on the opposite meridian
    side at the same t.
    """
    summands = list(summands)
    if len(summands) < 2:
        raise ConfigError("a chain needs at least two summands")
    if len(T_list) != len(summands) - 1:
        raise ConfigError(f"a chain of {len(summands)} summands needs {len(summands) - 1} neck parameters")
    resolved = [replace(summands[0], extra_points=())]
    for s in summands[1:-1]:
        if s.extra_points:
            resolved.append(replace(s, extra_points=(s.extra_points[0],)))
        else:
            p = s.gluing_point
            resolved.append(replace(s, extra_points=(GluingPoint(p.t, math.pi if p.sigma > 0 else 0.0),)))
    resolved.append(replace(summands[-1], extra_points=()))
    return GluingConfig(tuple(resolved), tuple(T_list), cutoff_width, grid or GridResolution())
