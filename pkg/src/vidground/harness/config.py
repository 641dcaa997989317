"""Run configuration: nested dataclasses, JSON files and ``key=value`` overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from ..encoders import ModelConfig


@dataclass
class ContrastiveConfig:
    enabled: bool = True
    beta: float = 0.5
    delta: float = 0.2
    margin_ratio: float = 0.1
    text_mode: str = "off"


@dataclass
class TrainConfig:
    lr: float = 3e-5
    batch_size: int = 16
    epochs: int = 8
    grounding_epochs: int | None = None  # defaults to ``epochs``
    generation_epochs: int | None = None
    clip_norm: float | None = 1.0
    schedule: str = "two_stage"  # or "joint"
    eval_batch: int = 64
    max_batches_per_epoch: int | None = None  # subsample long epochs

    @property
    def stage1_epochs(self) -> int:
        return self.epochs if self.grounding_epochs is None else self.grounding_epochs

    @property
    def stage2_epochs(self) -> int:
        return self.epochs if self.generation_epochs is None else self.generation_epochs


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    turn_selection: bool = True
    video_mask: bool = True
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs"

    @property
    def toggles(self) -> tuple[str, ...]:
        on = []
        if self.turn_selection:
            on.append("ts")
        if self.video_mask:
            on.append("vm")
        if self.contrastive.enabled:
            on.append("c")
        return tuple(on)

    def with_toggles(self, toggles) -> "RunConfig":
        """Copy with exactly the named components switched on."""
        names = {t.strip().lower() for t in toggles if t.strip()}
        unknown = names - {"ts", "vm", "c"}
        if unknown:
            raise ValueError(f"unknown toggles {sorted(unknown)}")
        cfg = from_dict(to_dict(self))
        cfg.turn_selection = "ts" in names
        cfg.video_mask = "vm" in names
        cfg.contrastive.enabled = "c" in names
        return cfg


def desk_preset() -> RunConfig:
    """Settings for training from scratch at laptop scale."""
    cfg = RunConfig()
    cfg.train.lr = 1e-3
    cfg.train.batch_size = 32
    cfg.train.grounding_epochs = 10
    cfg.train.generation_epochs = 6
    cfg.train.max_batches_per_epoch = 100
    cfg.model.grounding_history = 0
    cfg.contrastive.delta = 0.01
    return cfg


def to_dict(cfg) -> dict:
    return asdict(cfg)


def _build(cls, data: dict):
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        val = data[f.name]
        default = f.default_factory() if callable(f.default_factory) else None  # type: ignore[misc]
        if is_dataclass(default) and isinstance(val, dict):
            val = _build(type(default), val)
        kwargs[f.name] = val
    extra = set(data) - {f.name for f in fields(cls)}
    if extra:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data)


def load_config(path) -> RunConfig:
    return from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")


def _coerce(text: str, current: Any):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if text.lower() in ("none", "null"):
        return None
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float) or current is None:
        try:
            return float(text) if any(c in text for c in ".eE") else int(text)
        except ValueError:
            return text
    return text


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` strings, e.g. ``contrastive.beta=0.3``."""
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        *path, leaf = key.strip().split(".")
        target = cfg
        for part in path:
            target = getattr(target, part)
        if not hasattr(target, leaf):
            raise ValueError(f"unknown config key {key!r}")
        setattr(target, leaf, _coerce(raw.strip(), getattr(target, leaf)))
    if hasattr(cfg.model, "__post_init__"):
        cfg.model.__post_init__()
    return cfg
