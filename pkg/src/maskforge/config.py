"""Config file loading: TOML or JSON, keys mirror the dataclass field names."""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .defects import DefectSpec
from .adaption import TrainConfig
from .pipeline import RefineConfig
from .prompts import ExcavationConfig
from .stm import MergeConfig


class ConfigError(ValueError):
    pass


def load_config_file(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    if p.suffix.lower() == ".toml":
        with open(p, "rb") as f:
            return tomllib.load(f)
    if p.suffix.lower() == ".json":
        return json.loads(p.read_text())
    raise ConfigError(f"config must be .toml or .json, got {p.suffix!r}")


def _build(cls, payload: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    coerced = {}
    for k, v in payload.items():
        coerced[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {where} config: {e}") from e


def refine_config_from(payload: dict) -> RefineConfig:
    payload = dict(payload)
    exc = _build(ExcavationConfig, payload.pop("excavation", {}), "excavation")
    mrg = _build(MergeConfig, payload.pop("merge", {}), "merge")
    if "prompts_enabled" in payload:
        payload["prompts_enabled"] = frozenset(payload["prompts_enabled"])
    cfg = _build(RefineConfig, payload, "refine")
    return RefineConfig(excavation=exc, merge=mrg, iterations=cfg.iterations,
                        selector=cfg.selector, prompts_enabled=cfg.prompts_enabled)


def train_config_from(payload: dict) -> TrainConfig:
    return _build(TrainConfig, payload, "train")


def defect_spec_from(payload: dict) -> DefectSpec:
    return _build(DefectSpec, payload, "defects")
