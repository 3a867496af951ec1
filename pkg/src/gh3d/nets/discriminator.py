"""Pose-conditioned discriminator over concatenated RGB and mask renders."""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeError
from .config import CAMERA_DIM, SynthesisConfig
from .generator import camera_features
from .layers import Linear, lrelu


class Discriminator(nn.Module):
    """Strided conv stack to a feature vector; the camera enters by projection.

    score = out(f) + <embed(camera), f>
    """

    def __init__(self, cfg: SynthesisConfig = SynthesisConfig(), seed: int = 1):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(int(seed))
        r = cfg.image_resolution
        self.from_rgb = Linear(4, cfg.disc_width(r), gen, gain=math.sqrt(2.0))
        self.convs = nn.ParameterList()
        self.biases = nn.ParameterList()
        while r > 4:
            cin, cout = cfg.disc_width(r), cfg.disc_width(r // 2)
            self.convs.append(nn.Parameter(torch.randn(cout, cin, 3, 3, generator=gen) * math.sqrt(2.0 / (9 * cin))))
            self.biases.append(nn.Parameter(torch.zeros(cout)))
            r //= 2
        self.fc = Linear(cfg.disc_width(4) * 16, cfg.disc_features, gen, gain=math.sqrt(2.0))
        self.out = Linear(cfg.disc_features, 1, gen)
        self.embed = Linear(CAMERA_DIM, cfg.disc_features, gen)

    @property
    def dtype(self):
        return self.fc.weight.dtype

    def forward(self, images: torch.Tensor, cam: torch.Tensor) -> torch.Tensor:
        """``images`` (B, 4, R, R), ``cam`` (B, 25) already normalised; returns (B,) raw scores."""
        r = self.cfg.image_resolution
        if images.ndim != 4 or images.shape[1:] != (4, r, r):
            raise ShapeError(f"discriminator expects (B, 4, {r}, {r}) inputs, got {tuple(images.shape)}")
        x = lrelu(self.from_rgb(images.permute(0, 2, 3, 1)).permute(0, 3, 1, 2))
        for weight, bias in zip(self.convs, self.biases):
            x = lrelu(F.conv2d(x, weight, bias, stride=2, padding=1))
        feat = lrelu(self.fc(x.flatten(1)))
        return self.out(feat)[:, 0] + (self.embed(cam) * feat).sum(-1)


def pack_images(rgb, mask) -> torch.Tensor:
    """(H, W, 3) or (B, H, W, 3) RGB plus (H, W) or (B, H, W) mask -> (B, 4, H, W)."""
    rgb = torch.as_tensor(rgb)
    mask = torch.as_tensor(mask, dtype=rgb.dtype)
    if rgb.ndim == 3:
        rgb, mask = rgb[None], mask[None]
    if rgb.shape[:3] != mask.shape or rgb.shape[-1] != 3:
        raise ShapeError("rgb must be (..., H, W, 3) and mask (..., H, W)")
    return torch.cat([rgb, mask[..., None]], dim=-1).permute(0, 3, 1, 2)


def discriminator_forward(net: Discriminator, rgb, mask, camera) -> torch.Tensor:
    """Raw realism score(s) for rendered images and their camera(s)."""
    images = pack_images(rgb, mask).to(net.dtype)
    cam = camera_features(camera, net.cfg.camera_scale, net.dtype)
    return net(images, cam.expand(images.shape[0], -1))
