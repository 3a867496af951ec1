"""Network configuration and the analytic parameter count."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..errors import ConfigurationError
from ..scene.types import NUM_CHANNELS

CAMERA_DIM = 25

_DEFAULT_CHANNELS = {4: 128, 8: 128, 16: 64, 32: 64, 64: 32, 128: 32, 256: 16}


@dataclass(frozen=True)
class SynthesisConfig:
    """Sizes for the mapping nets, both synthesis stacks and the discriminator.

    ``channels`` maps a synthesis resolution to its feature width; missing
    levels fall back to a built-in schedule. ``image_resolution`` is the size
    of the rendered images the discriminator sees.
    """

    z_dim: int = 512
    w_dim: int = 512
    mapping_width: int = 512
    mapping_layers: int = 4
    geometry_hidden: int = 256
    num_coeffs: int = 32
    base_resolution: int = 4
    output_resolution: int = 64
    channels: Dict[int, int] = field(default_factory=dict)
    tokens: int = 8
    heads: int = 4
    attention_dim: int = 0  # 0 -> w_dim // tokens
    drop_prob: float = 0.10
    omega: float = 1.0
    camera_scale: float = 600.0  # divides the extrinsic translation entries before mapping
    torgb_gain: float = 0.1
    image_resolution: int = 64
    disc_channels: int = 32
    disc_max_channels: int = 128
    disc_features: int = 128

    def __post_init__(self):
        if self.base_resolution < 1 or self.output_resolution < self.base_resolution:
            raise ConfigurationError("output resolution must be at least the base resolution")
        ratio = self.output_resolution // self.base_resolution
        if ratio * self.base_resolution != self.output_resolution or ratio & (ratio - 1):
            raise ConfigurationError("output resolution must be base_resolution * 2^k")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigurationError("drop probability must lie in [0, 1]")
        if self.tokens < 1 or self.w_dim % self.tokens:
            raise ConfigurationError("token count must divide w_dim")
        if self.attn_dim % self.heads:
            raise ConfigurationError("head count must divide the attention width")
        if self.mapping_layers < 1:
            raise ConfigurationError("mapping needs at least one layer")
        r = self.image_resolution
        if r < 4 or r & (r - 1):
            raise ConfigurationError("image resolution must be a power of two >= 4")

    @property
    def attn_dim(self) -> int:
        return self.attention_dim or self.w_dim // self.tokens

    @property
    def token_dim(self) -> int:
        return self.w_dim // self.tokens

    @property
    def resolutions(self):
        out, r = [], self.base_resolution
        while r <= self.output_resolution:
            out.append(r)
            r *= 2
        return out

    @property
    def num_blocks(self) -> int:
        """Upsampling blocks after the base level."""
        return len(self.resolutions) - 1

    def width(self, resolution: int) -> int:
        if resolution in self.channels:
            return int(self.channels[resolution])
        return _DEFAULT_CHANNELS.get(resolution, 16)

    def disc_width(self, resolution: int) -> int:
        steps = int(np.log2(self.image_resolution // resolution))
        return min(self.disc_channels * 2 ** steps, self.disc_max_channels)

    def replace(self, **changes) -> "SynthesisConfig":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return SynthesisConfig(**values)


def _linear(i, o, bias=True):
    return i * o + (o if bias else 0)


def _stack_count(cfg: SynthesisConfig, attention: bool) -> int:
    def modconv(cin, cout, k):
        return _linear(cfg.w_dim, cin) + cout * cin * k * k + cout

    def attn(c):
        a, t = cfg.attn_dim, cfg.token_dim
        return _linear(c, a) + _linear(t, a) + _linear(t, a) + _linear(a, c, bias=False)

    res = cfg.resolutions
    c0 = cfg.width(res[0])
    n = c0 * res[0] * res[0]  # learned constant
    n += modconv(c0, c0, 3) + modconv(c0, NUM_CHANNELS, 1) + (attn(c0) if attention else 0)
    for prev, cur in zip(res[:-1], res[1:]):
        cin, cout = cfg.width(prev), cfg.width(cur)
        n += modconv(cin, cout, 3) + modconv(cout, NUM_CHANNELS, 1) + (attn(cout) if attention else 0)
    return n


def generator_parameter_count(cfg: SynthesisConfig) -> int:
    n = _linear(cfg.z_dim + CAMERA_DIM, cfg.mapping_width)
    n += (cfg.mapping_layers - 1) * _linear(cfg.mapping_width, cfg.mapping_width)
    n += 2 * _linear(cfg.mapping_width, cfg.w_dim)
    n += _linear(cfg.w_dim, cfg.geometry_hidden) + _linear(cfg.geometry_hidden, cfg.num_coeffs)
    return n + _stack_count(cfg, False) + _stack_count(cfg, True)


def discriminator_parameter_count(cfg: SynthesisConfig) -> int:
    r = cfg.image_resolution
    n = _linear(4, cfg.disc_width(r))
    while r > 4:
        n += cfg.disc_width(r) * cfg.disc_width(r // 2) * 9 + cfg.disc_width(r // 2)
        r //= 2
    n += _linear(cfg.disc_width(4) * 16, cfg.disc_features) + _linear(cfg.disc_features, 1)
    return n + _linear(CAMERA_DIM, cfg.disc_features)


def parameter_count(cfg: SynthesisConfig) -> int:
    """Trainable scalars of generator plus discriminator, derived from the config alone."""
    return generator_parameter_count(cfg) + discriminator_parameter_count(cfg)
