#!/usr/bin/env python3
# Validated configuration documents
#
# JSON inputs are checked by pydantic models and converted to the frozen
# dataclasses the numerical modules work with.

import json
import math
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.core.errors import ConfigError


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    h_body: float = Field(0.1, gt=0, le=0.5)
    n_theta: int = Field(41, ge=9)
    h_neck: float = Field(0.1, gt=0, le=0.5)
    n_psi: int = Field(41, ge=9)
    end_periods: float = Field(4.0, ge=1.0)
    margin: float = Field(1.0, ge=1.0)

    def to_resolution(self):
        from src.gluing.config import GridResolution

        return GridResolution(**self.model_dump())


class SummandConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eps: float = Field(gt=0)
    gluing_point: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    extra_points: List[List[float]] = Field(default_factory=list)
    alpha: float = Field(0.2, gt=0)
    deficiency_end: Optional[Literal["+", "-"]] = "+"

    @field_validator("gluing_point")
    @classmethod
    def _point_shape(cls, value):
        if len(value) != 2:
            raise ValueError("gluing_point is [t_p, theta_p]")
        if not (abs(value[1]) < 1e-12 or abs(value[1] - math.pi) < 1e-12):
            raise ValueError("theta_p must be 0 or pi")
        return value


class GluingConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=3)
    summands: List[SummandConfig] = Field(min_length=1)
    T: List[float] = Field(default_factory=list)
    cutoff_width: float = Field(1.0, gt=0)
    grids: GridSpec = Field(default_factory=GridSpec)

    @model_validator(mode="after")
    def _neck_count(self):
        if len(self.T) != len(self.summands) - 1:
            raise ValueError(f"{len(self.summands)} summands need {len(self.summands) - 1} neck parameters")
        for T in self.T:
            if T <= 2.0 * (self.cutoff_width + 1.0):
                raise ValueError(f"T={T} must exceed 2 * (cutoff_width + 1)")
        return self

    def to_config(self):
        from src.gluing.config import GluingPoint, SummandSpec, chain_config, GluingConfig

        summands = [
            SummandSpec(
                n=self.n,
                eps=s.eps,
                gluing_point=GluingPoint(*s.gluing_point),
                alpha=s.alpha,
                deficiency_end=s.deficiency_end,
                extra_points=tuple(GluingPoint(*p) for p in s.extra_points),
            )
            for s in self.summands
        ]
        grid = self.grids.to_resolution()
        if len(summands) == 1:
            return GluingConfig(tuple(summands), (), self.cutoff_width, grid)
        return chain_config(summands, self.T, self.cutoff_width, grid)


class SolverConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    delta: float = Field(0.5, gt=0)
    max_iterations: int = Field(30, ge=1)
    residual_target: float = Field(1e-9, gt=0)
    contraction_window: int = Field(3, ge=1)
    mode: Literal["fixed_point", "newton_accelerated"] = "fixed_point"
    damping_floor: float = Field(1.0 / 64.0, gt=0, le=1)
    deficiency_collar: float = Field(1.0, gt=0)

    def to_config(self):
        from src.corrector.solver import SolverConfig

        return SolverConfig(**self.model_dump())


class SweepConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    quantity: Literal["error_decay", "inverse_norm", "both"] = "both"
    T: List[float] = Field(min_length=2)
    probes: int = Field(8, ge=1)
    n_jobs: int = Field(1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gluing: GluingConfigModel
    solver: SolverConfigModel = Field(default_factory=SolverConfigModel)
    sweep: Optional[SweepConfigModel] = None


SCHEMAS = {
    "GridSpec": GridSpec,
    "SummandConfig": SummandConfig,
    "GluingConfig": GluingConfigModel,
    "SolverConfig": SolverConfigModel,
    "SweepConfig": SweepConfigModel,
    "RunConfig": RunConfig,
}


def load_run_config(path):
    """Read a run document; a bare gluing document is accepted as {"gluing": ...}"""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "gluing" not in payload:
        payload = {"gluing": payload}
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def schemas():
    return {name: model.model_json_schema() for name, model in SCHEMAS.items()}
