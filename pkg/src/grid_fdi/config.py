"""Run configuration: one TOML document, strictly validated.

Example::

    output_dir = "runs/default"

    [system]
    preset = "default"
    droop = [1.0, 1.6, 1.2, 1.0, 1.4, 2.2, 1.8, 1.0, 0.8, 1.5]

    [episode]
    seed = 7

    [ppo]
    total_env_steps = 200000

Omitted sections and fields take their documented defaults. Unknown keys are
rejected everywhere.
"""

import tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from grid_fdi.env import EpisodeConfig
from grid_fdi.errors import ConfigurationError
from grid_fdi.exports import ArtifactMetadata, content_hash
from grid_fdi.grid import Coupling, GridParams, default_system_data
from grid_fdi.ppo import PPOConfig

PARAM_FIELDS = ("inertia", "damping", "susceptance", "injection", "droop")


class SystemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: Literal["default"] | None = None
    inertia: list[float] | None = None
    damping: list[float] | None = None
    susceptance: list[list[float]] | None = None
    injection: list[float] | None = None
    droop: list[float] | None = None
    coupling: Coupling = "sine"

    def to_params(self) -> GridParams:
        """Explicit fields override the preset; without a preset every field is required."""
        values: dict[str, Any] = default_system_data() if self.preset == "default" else {}
        for name in PARAM_FIELDS:
            explicit = getattr(self, name)
            if explicit is not None:
                values[name] = explicit
            elif name not in values:
                raise ConfigurationError("required when no preset is named", f"system.{name}")
        try:
            return GridParams(**{name: values[name] for name in PARAM_FIELDS}, coupling=self.coupling)
        except ConfigurationError as exc:
            raise ConfigurationError(exc.reason, f"system.{exc.field_path}") from exc


class SearchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_workers: int = Field(1, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    system: SystemConfig = SystemConfig(preset="default")
    episode: EpisodeConfig = EpisodeConfig()
    ppo: PPOConfig = PPOConfig()
    search: SearchConfig = SearchConfig()
    output_dir: Path = Path("runs")

    def params(self) -> GridParams:
        return self.system.to_params()

    def config_hash(self) -> str:
        """SHA-256 of the resolved configuration; ``output_dir`` is not part of it."""
        return content_hash(self.model_dump(mode="json", exclude={"output_dir"}))

    def metadata(self, seed: int) -> ArtifactMetadata:
        return ArtifactMetadata(config_hash=self.config_hash(), seed=seed)

    def with_overrides(
        self,
        seed: int | None = None,
        total_steps: int | None = None,
        output_dir: Path | None = None,
        seed_target: Literal["episode", "ppo"] = "episode",
    ) -> "RunConfig":
        data = self.model_dump()
        if seed is not None:
            data[seed_target]["seed"] = seed
        if total_steps is not None:
            data["ppo"]["total_env_steps"] = total_steps
        if output_dir is not None:
            data["output_dir"] = output_dir
        return validate_config(data)


def _field_path(location: tuple[int | str, ...]) -> str:
    path = ""
    for part in location:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += f".{part}" if path else str(part)
    return path


def validate_config(data: dict[str, Any]) -> RunConfig:
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigurationError(first["msg"], _field_path(first["loc"])) from exc
    # Physical invariants are checked by GridParams, so build it once here.
    config.params()
    return config


def parse_config(path: Path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigurationError("config file not found", str(path)) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed TOML: {exc}", str(path)) from exc
    return validate_config(data)
