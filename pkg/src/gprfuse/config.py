"""Pipeline configuration: one JSON document, strict loading, dotted overrides.

Every leaf of the schema must be present in a config file; missing or unknown
fields raise :class:`ConfigError` naming the dotted field path.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .detect import DetectConfig, OneClassConfig, SlideConfig
from .featnet import TrainConfig
from .preprocess import PreprocessConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    slide: SlideConfig = field(default_factory=SlideConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(input_size=(64, 150)))
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    oneclass: OneClassConfig = field(default_factory=OneClassConfig)
    seed: int = 0
    # keep one class bank across all scans of a road instead of one per scan
    persist_bank: bool = True

    def detect_config(self) -> DetectConfig:
        return DetectConfig(slide=self.slide, oneclass=self.oneclass, preprocess=self.preprocess)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _check_scalar(path: str, value, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union or str(origin) == "types.UnionType":
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_scalar(path, value, inner[0])
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(path, f"expected a list of {len(args)} values, got {value!r}")
        return tuple(_check_scalar(f"{path}[{i}]", v, a) for i, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(data) - names):
        raise ConfigError(_join(path, key), "unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = _join(path, f.name)
        if f.name not in data:
            raise ConfigError(sub, "missing field")
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name], sub)
        else:
            kwargs[f.name] = _check_scalar(sub, data[f.name], tp)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path or "config", str(exc)) from None


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "")


def parse_override(text: str) -> tuple[str, object]:
    """``a.b.c=value``; the value is parsed as JSON, else kept as a string."""
    if "=" not in text:
        raise ConfigError("", f"override {text!r} must look like path.to.field=value")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip(), value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    data = json.loads(json.dumps(data))
    for text in overrides:
        path, value = parse_override(text)
        node = data
        keys = path.split(".")
        for i, key in enumerate(keys[:-1]):
            if not isinstance(node.get(key), dict):
                raise ConfigError(".".join(keys[: i + 1]), "unknown section")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(path, "unknown field")
        node[keys[-1]] = value
    return data


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    """Load ``path`` (or the defaults when None) and apply dotted overrides."""
    if path is None:
        data = PipelineConfig().to_dict()
    else:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"{path} is not valid JSON: {exc}") from None
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
    return from_dict(apply_overrides(data, overrides or []))
