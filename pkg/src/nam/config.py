"""``key = value`` run configuration."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

from .corpus import read_key_values
from .errors import ValidationFailure
from .model import ModelConfig


class ConfigError(ValidationFailure):
    code = "config"


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        k, eq, v = item.partition("=")
        if not eq or not k.strip():
            raise ConfigError(f"override {item!r} is not key=value")
        out[k.strip()] = v.strip()
    return out


def load_model_config(path: "str | Path | None", overrides: dict[str, str] | None = None) -> ModelConfig:
    """Built-in defaults, then the file, then command-line overrides."""
    values: dict[str, str] = {}
    if path is not None:
        try:
            values.update(read_key_values(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    values.update(overrides or {})
    try:
        return ModelConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def write_key_values(path: "str | Path", items: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in items.items()))
