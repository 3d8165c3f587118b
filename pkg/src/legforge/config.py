from __future__ import annotations

import os
import tomllib
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from legforge.errors import ConfigError
from legforge.ga import GAConfig
from legforge.simulation import EnvironmentKind, EnvironmentModel, EvaluationConfig, KinematicChain, SimulationConfig
from legforge.structcheck import StructuralConfig
from legforge.voxelizer import VoxelizerConfig

OUTPUT_DIR_ENV = "LEGFORGE_OUTPUT_DIR"
LOG_LEVEL_ENV = "LEGFORGE_LOG_LEVEL"
CONCURRENCY_ENV = "LEGFORGE_CONCURRENCY"


def default_output_dir() -> Path:
    return Path(os.getenv(OUTPUT_DIR_ENV, "runs"))


def default_log_level() -> str:
    return os.getenv(LOG_LEVEL_ENV, "INFO").upper()


def default_concurrency() -> int:
    raw = os.getenv(CONCURRENCY_ENV, "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{CONCURRENCY_ENV} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError(f"{CONCURRENCY_ENV} must be >= 1, got {value}")
    return value


class ExperimentSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    repeats: int = Field(default=1, ge=1)
    output_dir: Path = Field(default_factory=default_output_dir)
    concurrency: int = Field(default_factory=default_concurrency, ge=1)
    export_meshes: bool = True
    smooth_iterations: int = Field(default=0, ge=0)


class ExperimentConfig(BaseModel):
    """One TOML file: a table per module plus ``[experiment]`` for the harness itself."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    environment: EnvironmentModel = Field(default_factory=EnvironmentModel)
    chain: KinematicChain = Field(default_factory=KinematicChain)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    voxelizer: VoxelizerConfig = Field(default_factory=VoxelizerConfig)
    structural: StructuralConfig = Field(default_factory=StructuralConfig)
    ga: GAConfig = Field(default_factory=GAConfig)
    experiment: ExperimentSettings = Field(default_factory=ExperimentSettings)

    @property
    def evaluation(self) -> EvaluationConfig:
        return EvaluationConfig(
            chain=self.chain,
            simulation=self.simulation,
            voxelizer=self.voxelizer,
            structural=self.structural,
        )

    def for_environment(self, kind: EnvironmentKind) -> ExperimentConfig:
        """Same protocol in another medium; coefficients other than ``kind`` are kept."""
        return self.model_copy(update={"environment": self.environment.model_copy(update={"kind": kind})})

    def with_output_dir(self, output_dir: Path) -> ExperimentConfig:
        return self.model_copy(update={"experiment": self.experiment.model_copy(update={"output_dir": output_dir})})

    def dump(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def _error_path(error: dict[str, Any]) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "<root>"


def parse_config(payload: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as exc:
        problems = "; ".join(f"{_error_path(err)}: {err['msg']}" for err in exc.errors())
        raise ConfigError(f"invalid experiment config: {problems}") from exc


def load_config(path: Path | None = None) -> ExperimentConfig:
    """Read a TOML experiment file; ``None`` gives the defaults with environment overrides applied."""
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        payload = tomllib.loads(raw)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return parse_config(payload)
