"""Run configuration: one flat key = value file drives everything.

Every field has a documented default; `to_text` round-trips through
`from_text` so a resolved snapshot written next to a run can reproduce it.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import get_type_hints


class ConfigError(ValueError):
    """Raised for invalid model or run configuration."""


@dataclass
class ModelConfig:
    # architecture
    width_factor: float = 0.125          # scales the 64/128/256/512 widths
    stage_depths: tuple = (2, 2, 2, 2)   # residual blocks per stage
    stage_strides: tuple = (2, 2, 1, 1)  # last two stages keep stride 1
    use_relation: bool = True            # pre-subtraction attention (RA)
    use_scale: bool = True               # cross-scale channel gating (SA)
    use_fusion: bool = True              # cross-scale fusion block (CT)
    attention_scaling: bool = False      # optional 1/sqrt(C) damping, off by default
    dtype: str = "float32"

    # optimizer and schedule
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 80             # epochs between step decays (desk scale)
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0

    # validation / checkpoint selection
    selection_metric: str = "val_loss"   # or "val_f1"
    validate_every: int = 1

    # augmentation (geometry applies identically to both images + label,
    # blur to images only)
    aug_flip: bool = True
    aug_rescale: bool = True
    aug_rescale_max: float = 1.25
    aug_blur: bool = True
    aug_blur_prob: float = 0.5
    aug_blur_sigma_min: float = 0.3
    aug_blur_sigma_max: float = 1.0

    def __post_init__(self):
        self.stage_depths = tuple(int(v) for v in self.stage_depths)
        self.stage_strides = tuple(int(v) for v in self.stage_strides)
        self.validate()

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.lr_decay_factor <= 1):
            raise ConfigError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if self.width_factor <= 0:
            raise ConfigError(f"width_factor must be > 0, got {self.width_factor}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr_decay_every < 1:
            raise ConfigError("epochs, batch_size, and lr_decay_every must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.selection_metric not in ("val_loss", "val_f1"):
            raise ConfigError(f"unknown selection_metric {self.selection_metric!r}")
        if len(self.stage_depths) != 4 or len(self.stage_strides) != 4:
            raise ConfigError("stage_depths and stage_strides need exactly 4 entries")
        if self.validate_every < 1:
            raise ConfigError("validate_every must be >= 1")

    def to_text(self) -> str:
        lines = []
        for field in fields(self):
            value = getattr(self, field.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{field.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        hints = get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, value, hints[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def replace(self, **overrides) -> "ModelConfig":
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(overrides)
        return ModelConfig(**current)


def _coerce(key: str, value, hint):
    if not isinstance(value, str):
        return value
    try:
        if hint is bool:
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if hint is int:
            return int(value)
        if hint is float:
            return float(value)
        if hint is tuple:
            return tuple(int(v) for v in value.split(","))
        return value
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} has invalid value {value!r}") from exc
