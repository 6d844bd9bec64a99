"""Experiment configuration (versioned JSON schema, validated with pydantic)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainConfig(_Strict):
    lower: List[float] = Field(default_factory=lambda: [0.0, 0.0], min_length=2, max_length=2)
    upper: List[float] = Field(default_factory=lambda: [1.0, 1.0], min_length=2, max_length=2)
    standoff: float = Field(0.15, gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("domain.upper must exceed domain.lower on both axes")
        return self


class CoilConfig(_Strict):
    mode: Literal["aligned", "randomized"] = "aligned"
    per_side: int = Field(7, ge=1)
    seed: int = 0
    standoff: Optional[float] = Field(None, gt=0)
    moment: float = Field(1.0, gt=0)


class SensorConfig(_Strict):
    per_side: int = Field(19, ge=1)
    standoff: Optional[float] = Field(None, gt=0)


class GridConfig(_Strict):
    simulation: List[int] = Field(default_factory=lambda: [197, 197], min_length=2, max_length=2)
    reconstruction: List[int] = Field(default_factory=lambda: [75, 75], min_length=2, max_length=2)

    @field_validator("simulation", "reconstruction")
    @classmethod
    def _positive(cls, v):
        if min(v) < 1:
            raise ValueError("grid sizes must be >= 1")
        return v


class ShapeConfig(_Strict):
    type: Literal["ellipse", "rect"]
    cx: float = Field(ge=0, le=1)
    cy: float = Field(ge=0, le=1)
    hx: float = Field(gt=0)
    hy: float = Field(gt=0)
    value: float
    angle: float = 0.0
    op: Literal["add", "set"] = "add"


class PhantomConfig(_Strict):
    kind: Literal["p_shape", "shepp_logan", "tumor"]
    shapes: List[ShapeConfig] = Field(default_factory=list)


class NoiseConfig(_Strict):
    snr_db: Optional[float] = 80.0  # null disables noise
    seed: int = 1


class MethodConfig(_Strict):
    name: Literal["tikhonov", "tv", "bregman"]
    alphas: List[float] = Field(min_length=1)
    positivity: bool = True
    rho: float = Field(1.0, gt=0)
    max_iter: int = Field(2000, ge=1)
    tol: float = Field(1e-6, gt=0)
    flavor: Literal["anisotropic", "isotropic"] = "anisotropic"
    monitor_every: int = Field(1, ge=1)
    tau: float = Field(1.02, gt=0)
    max_outer: int = Field(20, ge=1)

    @field_validator("alphas")
    @classmethod
    def _alphas(cls, v):
        if any(not a > 0 for a in v):
            raise ValueError("alphas must be positive")
        return v


def _default_methods():
    alphas = [1e-9, 1e-8, 1e-7, 1e-6, 1e-5]
    return [
        MethodConfig(name="tikhonov", alphas=alphas, rho=1e-4, max_iter=1000, monitor_every=100),
        MethodConfig(name="tv", alphas=alphas, rho=1e-4, max_iter=1000, monitor_every=100),
    ]


def _default_phantoms():
    return [PhantomConfig(kind=k) for k in ("p_shape", "shepp_logan", "tumor")]


class ExperimentConfig(_Strict):
    version: Literal[1] = SCHEMA_VERSION
    name: str = "mrxi-2d"
    domain: DomainConfig = Field(default_factory=DomainConfig)
    coils: CoilConfig = Field(default_factory=CoilConfig)
    sensors: SensorConfig = Field(default_factory=SensorConfig)
    grids: GridConfig = Field(default_factory=GridConfig)
    phantoms: List[PhantomConfig] = Field(default_factory=_default_phantoms, min_length=1)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    methods: List[MethodConfig] = Field(default_factory=_default_methods, min_length=1)
    forward_model: Literal["dipole", "identity"] = "dipole"
    langevin: bool = True
    normalize_operator: bool = True
    allow_inverse_crime: bool = False
    write_operator: bool = True
    output_dir: str = "mrxi-out"

    @model_validator(mode="after")
    def _inverse_crime(self):
        if self.grids.simulation == self.grids.reconstruction and not self.allow_inverse_crime:
            raise ValueError(
                "simulation and reconstruction grids are identical (inverse crime); "
                "set allow_inverse_crime=true to override"
            )
        if self.forward_model == "identity" and self.grids.simulation != self.grids.reconstruction:
            raise ValueError("the identity forward model needs matching simulation and reconstruction grids")
        return self

    @property
    def coil_standoff(self) -> float:
        return self.coils.standoff if self.coils.standoff is not None else self.domain.standoff

    @property
    def sensor_standoff(self) -> float:
        return self.sensors.standoff if self.sensors.standoff is not None else self.domain.standoff


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def parse_config(text: str) -> ExperimentConfig:
    return ExperimentConfig.model_validate(json.loads(text))


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def with_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply dotted-key overrides (``{"coils.seed": 3}``) and re-validate."""
    data = cfg.model_dump(mode="json")
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    return ExperimentConfig.model_validate(data)
