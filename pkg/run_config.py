from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from engine.errors import EdgeTransformerError
from models.config import ModelConfig
from services.ablation import AblationConfig
from services.benchmark import BenchConfig
from services.training import OptimizerConfig, TrainSettings
from tasks.datasets import DataConfig

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".json"


class ConfigError(EdgeTransformerError, ValueError):
    """Unknown key, malformed line or invalid value in a run configuration."""


class RunConfig(BaseModel):
    """
    Everything a run needs. On disk it is flat ``section.key = value`` text, e.g.::

        seed = 7
        model.d = 64
        data.train_sizes = [2, 3]
        model.mode = value_ablation
    """

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    model: ModelConfig = Field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    train: TrainSettings = Field(default_factory=TrainSettings)
    data: DataConfig = Field(default_factory=DataConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    @classmethod
    def valid_keys(cls) -> list[str]:
        keys = []
        for name, field in cls.model_fields.items():
            section = field.annotation
            if isinstance(section, type) and issubclass(section, BaseModel):
                keys.extend(f"{name}.{key}" for key in section.model_fields)
            else:
                keys.append(name)
        return sorted(keys)

    @classmethod
    def from_flat(cls, values: Mapping[str, Any]) -> "RunConfig":
        valid = set(cls.valid_keys())
        unknown = sorted(set(values) - valid)
        if unknown:
            raise ConfigError(
                f"unknown config keys {unknown}; valid keys are: {', '.join(sorted(valid))}"
            )
        nested: dict[str, Any] = {}
        for key, value in values.items():
            section, _, name = key.partition(".")
            if name:
                nested.setdefault(section, {})[name] = value
            else:
                nested[section] = value
        try:
            return cls.model_validate(nested)
        except ValidationError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    def flatten(self) -> dict[str, Any]:
        """Key-sorted flat mapping with every default materialized."""
        flat: dict[str, Any] = {}
        for name, value in self.model_dump(mode="json").items():
            if isinstance(value, dict):
                flat.update({f"{name}.{key}": item for key, item in value.items()})
            else:
                flat[name] = value
        return dict(sorted(flat.items()))

    def to_text(self) -> str:
        return "".join(f"{key} = {json.dumps(value)}\n" for key, value in self.flatten().items())


def parse_value(raw: str) -> Any:
    """JSON when it parses (numbers, booleans, lists, quoted strings), the bare text otherwise."""
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_assignment(text: str, where: str = "override") -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"{where}: expected key = value, got {text.strip()!r}")
    return key.strip(), parse_value(raw)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Flat ``key = value`` lines; blank lines and ``#`` comment lines are skipped."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, value = parse_assignment(stripped, f"{source}:{lineno}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: key {key!r} set twice")
        values[key] = value
    return values


def read_config_file(path: Union[str, Path]) -> dict[str, Any]:
    """Flat values from a config text file or from the ``config`` block of a run manifest."""
    path = Path(path)
    logger.debug("reading config from %s", path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        logger.debug("failed to read config %s: %s", path, exc, exc_info=True)
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if path.suffix == MANIFEST_SUFFIX:
        try:
            manifest = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not a valid manifest: {exc}") from exc
        if not isinstance(manifest, dict) or not isinstance(manifest.get("config"), dict):
            raise ConfigError(f"{path}: manifest has no config block")
        return dict(manifest["config"])
    return parse_config_text(text, str(path))


def resolve_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    seed: Optional[int] = None,
) -> RunConfig:
    """File values, then ``--set`` overrides, then ``--seed``."""
    values = read_config_file(config_path) if config_path else {}
    for override in overrides:
        key, value = parse_assignment(override)
        values[key] = value
    if seed is not None:
        values["seed"] = seed
    config = RunConfig.from_flat(values)
    logger.debug("resolved config: %s", config.flatten())
    return config
