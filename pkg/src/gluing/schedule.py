#!/usr/bin/env python3
# Neck schedule for N-fold chains: each added junction may move the first body by at most 2^(-k-2)

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from src.core.errors import ConfigError, NumericalError
from src.delaunay.fowler import solve_orbit
from src.gluing.config import GluingConfig, GridResolution, chain_config
from src.gluing.manifold import ACTIVE, build_connected_sum, flat_distance

logger = logging.getLogger(__name__)


def schedule_bound(k):
    return 2.0 ** (-k - 2)


def first_body_window(glued):
    """Active nodes of body 0 between its core edges and outside B_(2 alpha) of its gluing point"""
    body = glued.body(0)
    summand = glued.config.summands[0]
    T, TH = body.chart.mesh()
    edges = [e.core_edge for e in glued.ends if e.summand == 0]
    lo, hi = min(edges), max(edges)
    inside = (T >= lo) & (T <= hi)
    far = flat_distance(T, TH, summand.gluing_point) >= 2.0 * summand.alpha
    return inside & far & (body.status == ACTIVE)


@dataclass
class ScheduleStage:
    junction: int
    T: float
    change: float
    bound: float
    attempts: int

    def to_record(self):
        return self.__dict__.copy()


@dataclass(eq=False)
class ScheduleResult:
    neck_parameters: list
    stages: list
    config: GluingConfig = field(repr=False)
    report: object = field(default=None, repr=False)

    def to_record(self):
        return {
            "T": list(self.neck_parameters),
            "stages": [s.to_record() for s in self.stages],
            "satisfied": all(s.change <= s.bound for s in self.stages),
        }


def _first_body_factor(config, orbits, solver_config):
    from src.corrector.solver import contraction_solve

    glued = build_connected_sum(config, orbits)
    report = contraction_solve(glued, solver_config)
    if not report.converged:
        raise NumericalError(f"chain solve with T={list(config.neck_parameters)} did not converge")
    body = glued.body(0)
    values = np.asarray(report.factor[body.slice]).reshape(body.chart.shape)
    return values, first_body_window(glued), report


def schedule_search(summands, T_start, T_step=2.0, T_max=30.0, cutoff_width=1.0, grid=None, solver_config=None):
    """Choose T_1, ..., T_(N-1) junction by junction.

    Junction k is added with the smallest T_k = T_start + m * T_step for which
    the solved factor on the fixed first-body window moves by at most 2^(-k-2)
    against the chain without it.
    """
    summands = list(summands)
    if len(summands) < 2:
        raise ConfigError("a schedule needs at least two summands")
    if T_step <= 0:
        raise ConfigError("T_step must be positive")
    orbits = [solve_orbit(s.n, s.eps) for s in summands]
    single = GluingConfig((replace(summands[0], extra_points=()),), (), cutoff_width, grid or GridResolution())
    previous, window, report = _first_body_factor(single, orbits[:1], solver_config)
    chosen, stages = [], []
    config = single
    for k in range(1, len(summands)):
        bound = schedule_bound(k)
        T = float(T_start)
        attempts = 0
        while True:
            attempts += 1
            config = chain_config(summands[:k + 1], chosen + [T], cutoff_width, single.grid)
            values, stage_window, stage_report = _first_body_factor(config, orbits[:k + 1], solver_config)
            mask = window & stage_window
            change = float(np.max(np.abs(values - previous)[mask])) if np.any(mask) else 0.0
            logger.info(f"Junction {k}: T={T:.2f}, first-body change {change:.3e} (bound {bound:.3e})")
            if change <= bound:
                break
            T += T_step
            if T > T_max:
                raise NumericalError(f"junction {k} needs T > {T_max} to meet the bound {bound:.3e}")
        chosen.append(T)
        stages.append(ScheduleStage(k, T, change, bound, attempts))
        previous, window, report = values, stage_window, stage_report
    return ScheduleResult(chosen, stages, config, report)
