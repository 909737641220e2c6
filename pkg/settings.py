#!/usr/bin/env python3
"""
Configuration

Environment (``TOMOGRAVITY_*`` variables or a ``.env`` file) only supplies
the default data directory, log level and worker count. Estimator options
come from presets, an optional TOML file section ``[estimator]`` and CLI
flags, in increasing precedence.
"""

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import DataFileError, InvalidInputError, TopologyParseError
from estimator_presets import ESTIMATOR_PRESETS, map_method_alias
from estimators import DEFAULT_PHI, ItgOptions
from tomographic_projection import DEFAULT_MAX_SWEEPS, DEFAULT_TOLERANCE

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-wide settings read from the environment"""
    model_config = SettingsConfigDict(env_prefix="TOMOGRAVITY_", env_file=".env", extra="ignore")

    data_dir: Path = Path("data")
    log_level: str = "INFO"
    workers: PositiveInt = 1

    def resolve(self, path: Union[str, Path]) -> Path:
        """Paths that do not exist as given are looked up under data_dir"""
        candidate = Path(path)
        if candidate.exists() or candidate.is_absolute():
            return candidate
        fallback = self.data_dir / candidate
        return fallback if fallback.exists() else candidate


class EstimatorConfig(BaseModel):
    """Validated estimator options, shared by every subcommand"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: str = "itg"
    phi: PositiveFloat = DEFAULT_PHI
    outer_tol: PositiveFloat = 1e-10
    inner_tol: PositiveFloat = DEFAULT_TOLERANCE
    max_iters: PositiveInt = 500
    max_sweeps: PositiveInt = DEFAULT_MAX_SWEEPS
    init: Literal["uniform", "gravity"] = "uniform"
    starts: PositiveInt = 1
    seed: int = Field(default=0, ge=0)
    gravity_exclude_self: bool = False
    clamp: bool = False

    @field_validator("method")
    @classmethod
    def known_method(cls, value: str) -> str:
        key = map_method_alias(value)
        if key not in ESTIMATOR_PRESETS:
            raise ValueError(f"unknown method '{value}' (known: {', '.join(sorted(ESTIMATOR_PRESETS))})")
        return key

    def itg_options(self) -> ItgOptions:
        return ItgOptions(
            outer_tol=self.outer_tol,
            max_outer_iters=self.max_iters,
            inner_tol=self.inner_tol,
            max_sweeps=self.max_sweeps,
            init=self.init,
            starts=self.starts,
            seed=self.seed,
            gravity_exclude_self=self.gravity_exclude_self,
        )


def load_config_file(path: Optional[Union[str, Path]]) -> Dict[str, Any]:
    """Read a TOML config file; returns {} when no path is given"""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise DataFileError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise TopologyParseError(f"invalid TOML: {e}", str(path)) from e


def build_estimator_config(
    file_config: Mapping[str, Any],
    overrides: Mapping[str, Any],
) -> EstimatorConfig:
    """
    Merge the ``[estimator]`` section with CLI overrides (None means "not given")

    Raises:
        InvalidInputError: any option fails validation
    """
    merged = dict(file_config.get("estimator", {}))
    merged.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return EstimatorConfig(**merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise InvalidInputError(f"invalid estimator options: {problems}") from e
