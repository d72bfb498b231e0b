"""Run configuration: nested dataclasses plus a flat dotted key-value file
format (`optimizer.lr = 3e-4`) with typed overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .encoders import EncoderConfig
from .fusion import FusionConfig
from .losses import LossWeights
from .model import GROUNDING_MODES, ModelConfig
from .synth import SynthConfig
from .training import OptimizerConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    manifest_dir: str = ""
    output_dir: str = "runs"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    batch_size: int = 16
    epochs: int = 20
    finetune_epochs: int = 30
    finetune_lr: float = 1e-3
    seed: int = 0
    grounding: str = "cross_attention"
    ecls: str = "on"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for in-batch negatives")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.grounding not in GROUNDING_MODES:
            raise ConfigError(f"grounding must be one of {GROUNDING_MODES}")
        if self.ecls not in ("on", "off"):
            raise ConfigError("ecls must be 'on' or 'off'")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            encoder=dataclasses.replace(self.encoder, vocab_size=vocab_size),
            fusion=self.fusion,
            weights=self.weights,
            grounding=self.grounding,
            use_entity_loss=self.ecls == "on",
        )


def parse_config_text(text: str) -> dict[str, str]:
    """Flat `dotted.key = value` lines; '#' starts a comment; blanks ignored."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        mapping[key] = value
    return mapping


def _coerce(value: str, current) -> object:
    if isinstance(current, bool):
        if value.lower() in ("true", "1", "yes", "on"):
            return True
        if value.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        parts = [p for p in value.replace(",", " ").split() if p]
        return tuple(float(p) for p in parts)
    return value


def apply_overrides(config: RunConfig, mapping: dict[str, str]) -> RunConfig:
    """Set dotted keys on nested dataclass fields with type coercion.

    Dataclass validation re-runs on every touched level, so invalid
    combinations fail at parse time rather than mid-run.
    """
    updates: dict[str, dict] = {}
    for dotted, raw in mapping.items():
        parts = dotted.split(".")
        target = config
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise ConfigError(f"unknown config section {part!r} in {dotted!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if not dataclasses.is_dataclass(target) or not hasattr(target, leaf):
            raise ConfigError(f"unknown config key {dotted!r}")
        updates.setdefault(".".join(parts[:-1]), {})[leaf] = _coerce(
            raw, getattr(target, leaf)
        )

    # rebuild bottom-up so __post_init__ validation runs everywhere
    def rebuild(obj, prefix: str):
        if not dataclasses.is_dataclass(obj):
            return obj
        kwargs = {}
        for f in dataclasses.fields(obj):
            child_prefix = f"{prefix}.{f.name}" if prefix else f.name
            value = rebuild(getattr(obj, f.name), child_prefix)
            kwargs[f.name] = value
        for leaf, value in updates.get(prefix, {}).items():
            kwargs[leaf] = value
        return type(obj)(**kwargs)

    return rebuild(config, "")


def load_run_config(path: str | Path | None = None,
                    overrides: dict[str, str] | None = None) -> RunConfig:
    config = RunConfig()
    if path is not None:
        config = apply_overrides(config, parse_config_text(Path(path).read_text()))
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(obj: dict) -> RunConfig:
    def build(cls, data):
        kwargs = {}
        for f in dataclasses.fields(cls):
            value = data[f.name]
            if dataclasses.is_dataclass(f.type if isinstance(f.type, type) else None):
                kwargs[f.name] = build(f.type, value)
            elif isinstance(value, dict):
                kwargs[f.name] = build(type(getattr(cls(), f.name)), value)
            elif isinstance(value, list):
                kwargs[f.name] = tuple(value)
            else:
                kwargs[f.name] = value
        return cls(**kwargs)

    return build(RunConfig, obj)
