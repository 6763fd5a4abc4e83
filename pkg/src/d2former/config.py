"""Flat ``section.key = value`` configuration files.

Sections map onto dataclasses: ``model`` -> D2FormerConfig, ``loss`` ->
LossWeights, ``data`` -> DatasetSpec, ``train`` -> TrainConfig. Lines starting
with ``#`` are comments. Tuple-valued fields take comma-separated values.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .ctensor import ContractError
from .desk import TOY_LR
from .model import D2FormerConfig
from .training import DatasetSpec, LossWeights, TrainConfig


class ConfigError(ContractError):
    pass


@dataclass
class RunConfig:
    model: D2FormerConfig = field(default_factory=D2FormerConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    toy: bool = False

    @classmethod
    def toy_run(cls) -> "RunConfig":
        return cls(model=D2FormerConfig.toy(), train=TrainConfig(lr=TOY_LR), toy=True)


SECTIONS = {"model": D2FormerConfig, "loss": LossWeights, "data": DatasetSpec, "train": TrainConfig}


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _coerce(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    try:
        if origin is tuple:
            (elem, *_rest) = typing.get_args(tp)
            return tuple(_coerce(v, elem, key) for v in raw.split(",") if v.strip())
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply ``text`` on top of ``base`` (defaults when None). Unknown keys are errors."""
    cfg = base or RunConfig()
    updates: dict[str, dict] = {s: {} for s in SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "toy":
            cfg.toy = _coerce(value, bool, key)
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key: {key}")
        types = _field_types(SECTIONS[section])
        if name not in types:
            raise ConfigError(f"unknown config key: {key}")
        updates[section][name] = _coerce(value, types[name], key)
    if cfg.toy and not updates["model"]:
        cfg.model = D2FormerConfig.toy()
    elif cfg.toy:
        cfg.model = D2FormerConfig.toy(**updates["model"])
        updates["model"] = {}
    try:
        for section, vals in updates.items():
            if vals:
                setattr(cfg, section, dataclasses.replace(getattr(cfg, section), **vals))
    except (ContractError, TypeError) as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise FileNotFoundError(f"cannot read config {p}: {e.strerror}") from None
    return parse_config(text)


def format_config(cfg: RunConfig) -> str:
    lines = [f"toy = {str(cfg.toy).lower()}"]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{section}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
