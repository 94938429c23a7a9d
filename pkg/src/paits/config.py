"""Experiment configuration as nested dataclasses with JSON round trip."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import WindowingConfig
from .synthetic import SynthConfig
from .training import TrainConfig


@dataclass
class ModelSettings:
    seqlen: int | None = None  # None: 99th percentile of training lengths
    embed_dim: int = 50
    blocks: int = 2
    heads: int = 4
    dropout: float = 0.2
    ff_dim: int = 100
    static_embed_dim: int = 50
    reconstruct_target: str = "value"


@dataclass
class ExperimentConfig:
    mode: str = "healthcare"  # or "retail"
    data_dir: str = "data"
    runs_dir: str = "runs"
    supervised_window: float = 24.0
    interval_width: float = 1.0
    split_seed: int = 0
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    search_budget: int = 8
    search_seed: int = 0
    search_fraction: float = 1.0
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    fractions: list = field(default_factory=lambda: [0.1, 0.2, 0.5, 1.0])

    def __post_init__(self):
        if self.mode not in ("healthcare", "retail"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.model.seqlen is not None and self.model.seqlen < 1:
            raise ValueError("seqlen must be >= 1")
        if self.interval_width <= 0:
            raise ValueError("interval_width must be positive")


def _build(cls, data):
    if not dataclasses.is_dataclass(cls) or not isinstance(data, dict):
        return data
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        kwargs[name] = _build(hint, value) if dataclasses.is_dataclass(hint) else value
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Apply dotted-key overrides, e.g. ``override(cfg, **{"train.seed": 3})``."""
    data = to_dict(cfg)
    for key, value in changes.items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise KeyError(key)
        node[leaf] = value
    return from_dict(data)
