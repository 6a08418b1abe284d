"""Flat ``key = value`` configuration files.

Keys are dotted paths into the configuration tree, for example::

    preset = toy                  # toy | desk | full, applied before the other keys
    model.visual.d_model = 32
    model.coa.temperature = 0.5
    runtime.window_weight = 0.49
    train.learning_rate = 1e-3
    train.max_steps = none

``#`` starts a comment. Unknown keys and badly typed values are errors that
name the file and line.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig
from .runtime import RuntimeConfig, TrainConfig
from .visual import ConfigError

PRESETS = {"toy": ModelConfig.toy, "desk": ModelConfig.desk, "full": ModelConfig.full}


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    preset: str = "desk"

    def validate(self) -> "ExperimentConfig":
        self.model.validate()
        self.runtime.validate(self.model)
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(ModelConfig.from_dict(d["model"]), RuntimeConfig(**d["runtime"]), TrainConfig(**d["train"]),
                   d.get("preset", "desk"))


def _convert(raw: str, hint, current):
    text = raw.strip()
    if (text.startswith('"') and text.endswith('"')) or (text.startswith("'") and text.endswith("'")):
        text = text[1:-1]
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.lower() in ("none", "null"):
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool or isinstance(current, bool):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def set_key(cfg: ExperimentConfig, key: str, raw: str) -> None:
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or p not in {f.name for f in dataclasses.fields(obj)}:
            raise KeyError(key)
        obj = getattr(obj, p)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(obj):
        raise KeyError(key)
    fields = {f.name: f for f in dataclasses.fields(obj)}
    if leaf not in fields or dataclasses.is_dataclass(getattr(obj, leaf)):
        raise KeyError(key)
    hints = typing.get_type_hints(type(obj))
    setattr(obj, leaf, _convert(raw, hints[leaf], getattr(obj, leaf)))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    entries = []
    preset = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"{source}:{lineno}: unknown preset {value!r} (choose from {sorted(PRESETS)})")
            preset = value
        else:
            entries.append((lineno, key, value))
    cfg = ExperimentConfig(model=PRESETS[preset or "desk"](), preset=preset or "desk")
    for lineno, key, value in entries:
        try:
            set_key(cfg, key, value)
        except KeyError:
            raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}") from None
        except (ValueError, StopIteration) as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
    try:
        return cfg.validate()
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    lines = [f"preset = {cfg.preset}"]

    def walk(obj, prefix):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(v):
                walk(v, key + ".")
            elif key != "preset":
                lines.append(f"{key} = {'none' if v is None else str(v).lower() if isinstance(v, bool) else v}")
    walk(cfg, "")
    return "\n".join(lines) + "\n"
