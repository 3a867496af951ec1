"""Dual-branch texture generator: mapping, geometry mapping and two synthesis stacks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..errors import NumericError, ShapeError, UsageError
from ..scene.types import NUM_CHANNELS, QUAT, SCALE, CameraPose, GaussianTextureMap
from .config import CAMERA_DIM, SynthesisConfig
from .layers import CrossAttention, Linear, ModulatedConv, cfg_blend, lrelu, upsample

HAIR, FACE = "hair", "face"
TEXTURE_LOG_SCALE = float(np.log(4.0))  # mm; initial Gaussian size
HEAD_BIAS_STD = 0.1


@dataclass
class WCode:
    """Intermediate latent (B, w_dim) with the branch it was produced for."""

    value: torch.Tensor
    role: str


def camera_features(camera, scale: float, dtype=torch.float32) -> torch.Tensor:
    """(B, 25) camera vectors with the extrinsic translation entries divided by ``scale``."""
    if isinstance(camera, CameraPose):
        camera = [camera]
    if isinstance(camera, (list, tuple)):
        vec = torch.as_tensor(np.stack([c.to_vector() for c in camera]), dtype=dtype)
    else:
        vec = torch.as_tensor(camera, dtype=dtype)
        if vec.ndim == 1:
            vec = vec[None]
    if vec.shape[-1] != CAMERA_DIM:
        raise ShapeError(f"camera vectors must have {CAMERA_DIM} entries")
    factor = torch.ones(CAMERA_DIM, dtype=dtype)
    factor[[3, 7, 11]] = 1.0 / scale
    return vec * factor


class MappingNetwork(nn.Module):
    def __init__(self, cfg: SynthesisConfig, gen: torch.Generator):
        super().__init__()
        dims = [cfg.z_dim + CAMERA_DIM] + [cfg.mapping_width] * cfg.mapping_layers
        self.trunk = nn.ModuleList(Linear(a, b, gen, gain=np.sqrt(2.0)) for a, b in zip(dims[:-1], dims[1:]))
        self.hair = Linear(cfg.mapping_width, cfg.w_dim, gen)
        self.face = Linear(cfg.mapping_width, cfg.w_dim, gen)

    def forward(self, z, cam):
        h = torch.cat([z, cam], dim=-1)
        for layer in self.trunk:
            h = lrelu(layer(h))
        return self.hair(h), self.face(h)


class GeometryMapping(nn.Module):
    def __init__(self, cfg: SynthesisConfig, gen: torch.Generator):
        super().__init__()
        self.fc0 = Linear(cfg.w_dim, cfg.geometry_hidden, gen, gain=np.sqrt(2.0))
        self.fc1 = Linear(cfg.geometry_hidden, cfg.num_coeffs, gen, gain=0.5)

    def forward(self, w):
        return self.fc1(lrelu(self.fc0(w)))


class SynthesisLevel(nn.Module):
    """One resolution level: [upsample] -> modulated 3x3 conv -> lrelu -> [attention residual]; plus ToRGB."""

    def __init__(self, cfg: SynthesisConfig, cin, cout, gen, upsample_input, attention):
        super().__init__()
        self.upsample_input = upsample_input
        self.conv = ModulatedConv(cin, cout, 3, cfg.w_dim, gen)
        self.torgb = ModulatedConv(cout, NUM_CHANNELS, 1, cfg.w_dim, gen, demodulate=False, gain=cfg.torgb_gain)
        self.attn = CrossAttention(cout, cfg.w_dim, cfg.tokens, cfg.heads, cfg.attn_dim, gen) if attention else None

    def features(self, x, w):
        if self.upsample_input:
            x = upsample(x)
        return lrelu(self.conv(x, w))

    def condition(self, x, cond):
        """Add the cross-attention residual; a null condition leaves ``x`` untouched."""
        if self.attn is None or cond is None:
            return x
        return x + self.attn(x, cond)

    def forward(self, x, y, w, cond=None):
        x = self.condition(self.features(x, w), cond)
        rgb = self.torgb(x, w)
        return x, (rgb if y is None else upsample(y) + rgb)


class SynthesisStack(nn.Module):
    def __init__(self, cfg: SynthesisConfig, gen: torch.Generator, attention: bool):
        super().__init__()
        res = cfg.resolutions
        c0 = cfg.width(res[0])
        self.const = nn.Parameter(torch.randn(1, c0, res[0], res[0], generator=gen))
        levels = [SynthesisLevel(cfg, c0, c0, gen, False, attention)]
        for prev, cur in zip(res[:-1], res[1:]):
            levels.append(SynthesisLevel(cfg, cfg.width(prev), cfg.width(cur), gen, True, attention))
        self.levels = nn.ModuleList(levels)
        self.attention = attention

    def forward(self, w, cond=None, omega: float = 1.0, two_stream: Optional[bool] = None):
        """Raw texture (B, 14, R, R).

        With a condition and ``omega`` other than 1, a second stream runs with the
        null condition and the two are blended per level; the guided features feed
        the next level. ``two_stream`` forces (or suppresses) the second stream.
        """
        b = w.shape[0]
        x = self.const.expand(b, -1, -1, -1)
        if cond is None or not self.attention:
            y = None
            for level in self.levels:
                x, y = level(x, y, w, cond)
            return y
        if two_stream is None:
            two_stream = omega not in (0, 1)
        if not two_stream:
            use = cond if omega != 0 else None
            y = None
            for level in self.levels:
                x, y = level(x, y, w, use)
            return y
        x_guided, x_null, y = x, x, None
        for level in self.levels:
            x_cond = level.condition(level.features(x_guided, w), cond)
            x_null = level.condition(level.features(x_null, w), None)
            x_guided = cfg_blend(x_cond, x_null, omega)
            rgb = level.torgb(x_guided, w)
            y = rgb if y is None else upsample(y) + rgb
        return y


class Generator(nn.Module):
    """Mapping, geometry mapping, face stack (no attention) and hair stack (with attention)."""

    def __init__(self, cfg: SynthesisConfig = SynthesisConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(int(seed))
        self.mapping = MappingNetwork(cfg, gen)
        self.geometry = GeometryMapping(cfg, gen)
        self.face = SynthesisStack(cfg, gen, attention=False)
        self.hair = SynthesisStack(cfg, gen, attention=True)
        bias = torch.zeros(NUM_CHANNELS)
        bias[QUAT.start] = 1.0
        bias[SCALE] = TEXTURE_LOG_SCALE
        self.register_buffer("texture_bias", bias.reshape(1, NUM_CHANNELS, 1, 1))
        # small random head biases, drawn last so every other initial weight is unchanged; without them a zero
        # input would map to an exactly zero latent
        with torch.no_grad():
            for head in (self.mapping.hair, self.mapping.face):
                head.bias.copy_(HEAD_BIAS_STD * torch.randn(head.bias.shape, generator=gen))

    @property
    def dtype(self):
        return self.mapping.hair.weight.dtype


def mapping_forward(net: Generator, z, camera) -> Tuple[WCode, WCode]:
    z = torch.as_tensor(z, dtype=net.dtype)
    if z.ndim == 1:
        z = z[None]
    if z.shape[-1] != net.cfg.z_dim:
        raise ShapeError(f"z must have {net.cfg.z_dim} entries")
    cam = camera_features(camera, net.cfg.camera_scale, net.dtype)
    if not (torch.isfinite(z).all() and torch.isfinite(cam).all()):
        raise NumericError("non-finite mapping input")
    w_hair, w_face = net.mapping(z, cam.expand(z.shape[0], -1))
    return WCode(w_hair, HAIR), WCode(w_face, FACE)


def geometry_mapping(net: Generator, w_hair: WCode) -> torch.Tensor:
    if not isinstance(w_hair, WCode) or w_hair.role != HAIR:
        raise UsageError("geometry mapping takes the hair latent")
    return net.geometry(w_hair.value)


def synthesis_block(level: SynthesisLevel, x, y, w: WCode, w_face: Optional[WCode] = None):
    """One level of a synthesis stack; returns ``(x_next, y_next)``."""
    return level(x, y, w.value, None if w_face is None else w_face.value)


def draw_drop(rng: Union[np.random.Generator, torch.Generator], prob: float) -> bool:
    """Training-time condition-drop decision."""
    if isinstance(rng, torch.Generator):
        return bool(torch.rand((), generator=rng) < prob)
    return bool(rng.random() < prob)


@dataclass
class GeneratorOutput:
    hair: torch.Tensor  # (B, R, R, 14)
    face: torch.Tensor
    theta: torch.Tensor  # (B, num_coeffs)
    dropped: bool

    def textures(self, index: int = 0) -> Tuple[GaussianTextureMap, GaussianTextureMap]:
        return GaussianTextureMap(self.hair[index]), GaussianTextureMap(self.face[index])


def generate(net: Generator, z, camera, omega: Optional[float] = None, drop=None,
             two_stream: Optional[bool] = None) -> GeneratorOutput:
    """Batched generation.

    ``drop`` is either an explicit bool or a random generator used to draw the
    training-time drop decision with the configured probability. With ``drop``
    left as None (inference) the condition is controlled by ``omega`` alone.
    """
    w_hair, w_face = mapping_forward(net, z, camera)
    return generate_from_w(net, w_hair, w_face, omega, drop, two_stream)


def generate_from_w(net: Generator, w_hair: WCode, w_face: WCode, omega: Optional[float] = None, drop=None,
                    two_stream: Optional[bool] = None) -> GeneratorOutput:
    """Synthesis from given latents; lets the hair and face codes come from different samples."""
    omega = net.cfg.omega if omega is None else float(omega)
    if w_hair.role != HAIR or w_face.role != FACE:
        raise UsageError("expected (hair, face) latents")
    theta = geometry_mapping(net, w_hair)
    if drop is None or isinstance(drop, bool):
        dropped = bool(drop)
    else:
        dropped = draw_drop(drop, net.cfg.drop_prob)
    face = net.face(w_face.value) + net.texture_bias
    cond = None if dropped else w_face.value
    hair = net.hair(w_hair.value, cond, omega, two_stream) + net.texture_bias
    perm = (0, 2, 3, 1)
    return GeneratorOutput(hair.permute(*perm), face.permute(*perm), theta, dropped)


def generate_textures(net: Generator, z, camera, omega: Optional[float] = None, drop=None):
    """Single sample: ``(hair texture, face texture, theta)``."""
    out = generate(net, z, camera, omega, drop)
    hair, face = out.textures(0)
    return hair, face, out.theta[0]
