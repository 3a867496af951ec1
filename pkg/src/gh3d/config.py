"""Run configuration and its key-value text format.

One ``key = value`` pair per line; ``#`` starts a comment. Loss weight
overrides use ``weight.<term>`` keys, e.g. ``weight.rgb = 5``. Values are
parsed as the field's type; booleans accept true/false/1/0.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

from .errors import ConfigurationError
from .losses import LossWeights

MODES = ("gen-data", "fit-gaussians", "train-toy", "fit-hair", "build-pca", "sample", "edit", "cfg-sweep",
         "render", "check-grads")
WEIGHT_PREFIX = "weight."


@dataclass
class RunConfig:
    mode: str
    seed: int = 0
    iterations: int = 0  # 0 selects the mode's default budget
    lr: float = 0.0  # 0 selects the mode's default learning rate
    lr_d: float = 0.0
    weights: Dict[str, float] = field(default_factory=dict)
    image_size: int = 64
    texture_resolution: int = 64
    num_views: int = 8
    num_scenes: int = 1
    pose_swap_prob: float = 0.8
    omega: float = 1.0
    out_dir: str = "run"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.iterations < 0:
            raise ConfigurationError("iteration budget must be >= 1 (or 0 for the default)")
        if self.lr < 0 or self.lr_d < 0:
            raise ConfigurationError("learning rates must be positive (or 0 for the default)")
        if not 0.0 <= self.pose_swap_prob <= 1.0:
            raise ConfigurationError("pose-swap probability must lie in [0, 1]")
        if self.image_size < 4 or self.texture_resolution < 2:
            raise ConfigurationError("image size must be >= 4 and texture resolution >= 2")
        if self.num_views < 1 or self.num_scenes < 1:
            raise ConfigurationError("need at least one view and one scene")
        unknown = set(self.weights) - {f.name for f in dataclasses.fields(LossWeights)}
        if unknown:
            raise ConfigurationError(f"unknown loss weights: {sorted(unknown)}")
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        return LossWeights(**{**dataclasses.asdict(LossWeights()), **self.weights})

    def budget(self, default: int) -> int:
        return self.iterations or default

    def learning_rate(self, default: float) -> float:
        return self.lr or default

    def to_text(self) -> str:
        """Echo of every setting except the output location, so equal runs echo equal text."""
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "out_dir":
                continue
            if f.name == "weights":
                lines += [f"{WEIGHT_PREFIX}{k} = {v!r}" for k, v in sorted(self.weights.items())]
            else:
                lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "RunConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs: Dict[str, object] = {"weights": {}}
        for key, raw in values.items():
            if key.startswith(WEIGHT_PREFIX):
                kwargs["weights"][key[len(WEIGHT_PREFIX):]] = _parse(raw, "float", key)
            elif key in types and key != "weights":
                kwargs[key] = _parse(raw, types[key], key)
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        if "mode" not in kwargs:
            raise ConfigurationError("config needs a mode")
        return cls(**kwargs)


def _parse(raw, type_name, key):
    if not isinstance(raw, str):
        return raw
    try:
        if type_name in ("int", int):
            return int(raw)
        if type_name in ("float", float):
            return float(raw)
        if type_name in ("bool", bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigurationError(f"cannot parse {key} = {raw!r} as {type_name}") from None
    return raw


def parse_config_text(text: str) -> Dict[str, str]:
    """Key-value pairs of a config file; later keys override earlier ones."""
    values: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {number}: empty key")
        values[key] = value
    return values


def load_config(path, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from None
    return RunConfig.from_mapping({**parse_config_text(text), **(overrides or {})})
