"""Experiment configuration: one TOML file, strict keys, one seed."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import tomli

from .data import derive_seed
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .synthetic import FAMILIES, GenConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    train_families: tuple[str, ...] = ("CONN", "CN", "node-cls", "link-pred")
    cross_task_families: tuple[str, ...] = ("SPD",)
    instances_per_family: int = 600
    split_ratio: tuple[int, int, int] = (8, 1, 1)
    graphs: GenConfig = GenConfig()
    shifted_graphs: GenConfig = GenConfig(min_nodes=9, max_nodes=13, edge_prob=0.2)
    hop_radius: int = 2
    max_subgraph_nodes: int = 16

    def __post_init__(self):
        if not self.train_families:
            raise ConfigError("data.train_families must list at least one family")
        for f in self.train_families + self.cross_task_families:
            if f not in FAMILIES:
                raise ConfigError(f"unknown task family {f!r}")
        overlap = set(self.train_families) & set(self.cross_task_families)
        if overlap:
            raise ConfigError(f"families {sorted(overlap)} are both trained on and held out")
        if self.instances_per_family < sum(self.split_ratio):
            raise ConfigError("instances_per_family is too small to split")

    @property
    def all_families(self) -> tuple[str, ...]:
        return tuple(self.train_families) + tuple(self.cross_task_families)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 3000
    batch_size: int = 8
    lr: float = 3e-3
    graph_descriptions: int = 3000
    instruction_pairs: bool = True  # also train on [instruction ; answer] sequences


@dataclass(frozen=True)
class EvalConfig:
    max_new_tokens: int = 4
    max_instances: int = 0  # 0 = whole split


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 17
    schema_version: int = SCHEMA_VERSION
    data: DataConfig = DataConfig()
    encoder: EncoderConfig = EncoderConfig()
    decoder: DecoderConfig = DecoderConfig()
    pretrain: PretrainConfig = PretrainConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Propagate ``seed`` into every component that draws random numbers."""
        return replace(
            self,
            seed=seed,
            encoder=replace(self.encoder, seed=derive_seed(seed, "encoder")),
            decoder=replace(self.decoder, seed=derive_seed(seed, "decoder")),
            train=replace(self.train, seed=derive_seed(seed, "train")),
        )

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


# components whose seed is derived rather than configured
_DERIVED = {("encoder", "seed"), ("decoder", "seed"), ("train", "seed")}


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, raw: Mapping[str, Any], path: str):
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path or 'config'}: expected a table, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        where = f"{path}.{key}" if path else key
        if key not in known or (path, key) in _DERIVED:
            raise ConfigError(f"unknown config key {where!r}")
        default = getattr(cls(), key) if key in known else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, where)
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected a list")
            kwargs[key] = tuple(value)
        elif key == "mixture":
            kwargs[key] = dict(value)
        else:
            if default is not None and isinstance(default, (int, float)) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{where}: expected a number, got {value!r}")
                value = type(default)(value) if isinstance(default, float) else value
            elif isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(f"{where}: expected true or false, got {value!r}")
            elif isinstance(default, str) and not isinstance(value, str):
                raise ConfigError(f"{where}: expected a string, got {value!r}")
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


def config_from_dict(raw: Mapping[str, Any], seed: int | None = None) -> ExperimentConfig:
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    cfg = _build(ExperimentConfig, raw, "")
    return cfg.with_seed(cfg.seed if seed is None else seed)


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    try:
        raw = tomli.loads(Path(path).read_text())
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(raw, seed)
