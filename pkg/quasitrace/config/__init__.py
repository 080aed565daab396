import os
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from quasitrace import DIR_PRESETS
from quasitrace.cylinder import PRESETS, CylinderModel, CylinderOperator

ENV_OUT = "QUASITRACE_OUT"
ENV_THREADS = "QUASITRACE_THREADS"


class OperatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: Literal["rank_one", "diagonal", "banded", "poisson", "traceop", "boundary_psdo"] = Field(
        description="operator family")
    order: float = Field(description="order nu of the coefficient symbols")
    laguerre_size: int = Field(default=1, ge=1, description="Laguerre truncation J of the tensor")
    bandwidth: int = Field(default=0, ge=0, le=8, description="number of x'-Fourier modes on each side")
    seed: int = Field(default=0, description="seed of the random coefficient draws")
    weights: list[float] | None = Field(default=None, description="diagonal weights, for the diagonal preset")
    j: int = Field(default=0, ge=0, description="output Laguerre index, for rank_one")
    l: int = Field(default=0, ge=0, description="input Laguerre index, for rank_one")

    def build(self, name: str) -> CylinderOperator:
        factory = PRESETS[self.preset]
        if self.preset == "rank_one":
            return factory(self.order, self.j, self.l, name=name)
        if self.preset == "diagonal":
            return factory(self.order, tuple(self.weights or [1.0] * self.laguerre_size), name=name)
        if self.preset == "boundary_psdo":
            return factory(self.order, name=name)
        return factory(self.order, self.laguerre_size, self.bandwidth, self.seed, name=name)


class TaskConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["compute", "fit", "verify"] = Field(description="what the task does")
    name: str = Field(description="computation name (finite-part, alpha, compose, expand) or suite name")
    params: dict = Field(default_factory=dict, description="task parameters")


class NumericConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    precision: int = Field(default=40, ge=15, le=200, description="working precision in decimal digits")
    mu_low: float = Field(default=10.0, gt=0, description="lower end of the geometric mu-grid")
    mu_high: float = Field(default=1000.0, gt=0, description="upper end of the geometric mu-grid")
    mu_points: int = Field(default=48, ge=4, description="number of mu-grid points")
    fourier_K: int = Field(default=200, ge=1, description="direct mode-sum cutoff K")
    laguerre_J: int = Field(default=24, ge=1, description="Laguerre truncation for expansions of symbols")
    N: int | None = Field(default=None, ge=1, description="resolvent power; chosen so 2N >= nu + n + 6 when unset")
    depth: float = Field(default=4, gt=0, description="how far below the leading exponent the fit basis reaches")
    tolerance: float = Field(default=1e-8, ge=0, description="fit stability tolerance, relative to the fit scale")
    tail_tolerance: float = Field(default=1e-20, gt=0, description="relative bound on the mode-sum tail")
    claim_tolerance: float | None = Field(default=None, ge=0, description="overrides every claim tolerance")
    seed: int = Field(default=0, description="seed for random test points")
    threads: int = Field(default=1, ge=1, description="worker processes for suites")


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = Field(default="reports", description="where reports are written")
    formats: list[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"],
                                                  description="report formats")
    mlflow: bool = Field(default=False, description="track the run and trace heavy calls with mlflow")


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: CylinderModel = Field(default_factory=CylinderModel, description="half-cylinder parameters")
    operators: dict[str, OperatorConfig] = Field(default_factory=dict, description="named operators")
    tasks: list[TaskConfig] = Field(default_factory=list, description="tasks, run in order")
    numeric: NumericConfig = Field(default_factory=NumericConfig, description="precision, grids and tolerances")
    output: OutputConfig = Field(default_factory=OutputConfig, description="output paths and formats")

    def operator(self, name: str) -> CylinderOperator:
        if name not in self.operators:
            raise ValueError(f"unknown operator '{name}', defined: {sorted(self.operators)}")
        return self.operators[name].build(name)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def load_config(path) -> ExperimentConfig:
    """Reads a YAML (or JSON) experiment config; schema errors become ValueError."""
    path = Path(path)
    if not path.exists():
        preset = DIR_PRESETS / path.name
        if preset.exists():
            path = preset
        else:
            raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"cannot parse {path}: {e}") from e
    return parse_config(data)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ValueError(f"invalid config: {e}") from e


def apply_env(config: ExperimentConfig) -> ExperimentConfig:
    """QUASITRACE_OUT and QUASITRACE_THREADS override the output directory and worker count."""
    out = os.getenv(ENV_OUT)
    threads = os.getenv(ENV_THREADS)
    if out:
        config = config.model_copy(update={"output": config.output.model_copy(update={"directory": out})})
    if threads:
        try:
            count = int(threads)
        except ValueError as e:
            raise ValueError(f"{ENV_THREADS} must be an integer, got '{threads}'") from e
        if count < 1:
            raise ValueError(f"{ENV_THREADS} must be >= 1, got {count}")
        config = config.model_copy(update={"numeric": config.numeric.model_copy(update={"threads": count})})
    return config
