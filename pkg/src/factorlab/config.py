from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator, model_validator

from .errors import ConfigError
from .seqspace import SpaceSpec

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
INFINITY_SPELLINGS = ("inf", "+inf", ".inf", "infinity", "∞")


@dataclass
class AppConfig:
    out_dir: Path
    log_level: str
    telemetry: bool


def load_app_config() -> AppConfig:
    out_dir = Path(os.environ.get("FACTORLAB_OUT_DIR", "reports"))

    log_level = os.environ.get("FACTORLAB_LOG_LEVEL", "INFO").upper()
    if log_level not in LOG_LEVELS:
        raise RuntimeError(f"Invalid FACTORLAB_LOG_LEVEL: {log_level}. Must be one of {', '.join(LOG_LEVELS)}.")

    telemetry = os.environ.get("ENABLE_TELEMETRY", "false").lower()
    if telemetry not in ("true", "false"):
        raise RuntimeError(f"Invalid ENABLE_TELEMETRY: {telemetry}. Must be 'true' or 'false'.")

    return AppConfig(out_dir=out_dir, log_level=log_level, telemetry=telemetry == "true")


def parse_exponent(value: Any) -> Any:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in INFINITY_SPELLINGS:
            return math.inf
        return float(text)
    return value


class SpaceConfig(BaseModel):
    """Ambient dual space S*: ``lp`` (ℓ^p_dim) or ``lp_sum`` (ℓ^p(ℓ^inner_p_dim) with outer_dim rows)."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["lp", "lp_sum"] = "lp"
    p: float
    dim: int = Field(ge=2)
    inner_p: float | None = None
    outer_dim: int = Field(default=1, ge=1)
    K_u: float = Field(default=1.0, ge=1.0)
    K_s: float = Field(default=1.0, ge=1.0)

    @field_validator("p", "inner_p", mode="before")
    @classmethod
    def _parse_exponent(cls, value: Any) -> Any:
        return parse_exponent(value)

    @field_validator("p", "inner_p")
    @classmethod
    def _check_exponent(cls, value: float | None) -> float | None:
        if value is not None and not value >= 1:
            raise ValueError(f"exponent must lie in [1, inf], got {value}")
        return value

    @field_serializer("p", "inner_p")
    def _serialize_exponent(self, value: float | None) -> float | str | None:
        if value is not None and math.isinf(value):
            return "inf"
        return value

    @model_validator(mode="after")
    def _check_kind(self) -> SpaceConfig:
        if self.kind == "lp_sum" and self.inner_p is None:
            raise ValueError("lp_sum spaces need inner_p")
        if self.kind == "lp":
            if self.inner_p is not None or self.outer_dim != 1:
                raise ValueError("lp spaces take neither inner_p nor outer_dim")
            if self.K_u != 1 or self.K_s != 1:
                raise ValueError("the unit vector basis of lp has K_u = K_s = 1")
        return self

    def to_space(self) -> SpaceSpec:
        if self.kind == "lp":
            return SpaceSpec.lp(self.p, self.dim)
        assert self.inner_p is not None
        return SpaceSpec.lp_sum(self.p, SpaceSpec.lp(self.inner_p, self.dim), self.outer_dim, self.K_u, self.K_s)


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    recipe: Literal["identity", "zero", "coordinate_projection", "random_rank_k_projection", "scaled_identity", "random_contraction", "from_file"]
    density: float = Field(default=0.5, ge=0.0, le=1.0)
    k: int = Field(default=1, ge=1)
    c: float = 1.0
    norm_cap: float = Field(default=1.0, gt=0.0)
    path: str | None = None

    @model_validator(mode="after")
    def _check_path(self) -> GeneratorConfig:
        if self.recipe == "from_file" and not self.path:
            raise ValueError("from_file needs a path")
        return self


class Tolerances(BaseModel):
    model_config = ConfigDict(extra="forbid")

    residual: float = Field(default=1e-9, gt=0)
    algebraic: float = Field(default=1e-10, gt=0)
    norm_rtol: float = Field(default=1e-6, ge=0)
    cert_rtol: float = Field(default=1e-9, ge=0)
    defect_ceiling: float = Field(default=1.0 - 1e-6, gt=0, lt=1)
    power_restarts: int = Field(default=8, ge=0)
    power_tol: float = Field(default=1e-10, gt=0)
    power_max_iter: int = Field(default=100, ge=1)
    crucial_samples: int = Field(default=100, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    name: str | None = None
    space: SpaceConfig
    generator: GeneratorConfig
    target_blocks: int = Field(ge=1)
    min_retained: int | None = Field(default=None, ge=1)
    reserve: int | None = Field(default=None, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    strategy: Literal["auto", "bucket", "best_pair"] = "auto"
    tolerances: Tolerances = Field(default_factory=Tolerances)
    exact: bool = False
    record_wall_time: bool = False
    export_operators: bool = False


class SeedSweep(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start: int = Field(default=0, ge=0)
    count: int = Field(ge=1)


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class BatchConfig(BaseModel):
    """A base run expanded either over a seed sweep or over a list of partial overrides."""

    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    base: RunConfig
    seeds: SeedSweep | None = None
    runs: list[dict[str, Any]] | None = None
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_expansion(self) -> BatchConfig:
        if self.seeds is not None and self.runs is not None:
            raise ValueError("give either seeds or runs, not both")
        return self

    def expand(self) -> list[RunConfig]:
        if self.seeds is not None:
            return [self.base.model_copy(update={"seed": seed}) for seed in range(self.seeds.start, self.seeds.start + self.seeds.count)]
        if self.runs is not None:
            base = self.base.model_dump()
            return [RunConfig.model_validate(deep_merge(base, override)) for override in self.runs]
        return [self.base]


def _load_yaml(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}", path=str(path)) from e
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration {path} must be a mapping at the top level", path=str(path))
    return data


def _resolve_generator_path(config: RunConfig, base_dir: Path) -> None:
    if config.generator.path and not Path(config.generator.path).is_absolute():
        config.generator.path = str(base_dir / config.generator.path)


def load_run_config(path: str | Path) -> RunConfig:
    data = _load_yaml(path)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration {path}: {e}", path=str(path)) from e
    _resolve_generator_path(config, Path(path).parent)
    return config


def load_batch_config(path: str | Path) -> BatchConfig:
    data = _load_yaml(path)
    try:
        config = BatchConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid batch configuration {path}: {e}", path=str(path)) from e
    _resolve_generator_path(config.base, Path(path).parent)
    for override in config.runs or []:
        generator = override.get("generator")
        if isinstance(generator, dict) and generator.get("path") and not Path(generator["path"]).is_absolute():
            generator["path"] = str(Path(path).parent / generator["path"])
    return config
