"""Building blocks: seeded linear layers, modulated convolution, cross-attention, CFG blend."""
from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeError

LRELU_SLOPE = 0.2


def _normal(shape, gen: torch.Generator, std: float) -> nn.Parameter:
    return nn.Parameter(torch.randn(*shape, generator=gen, dtype=torch.float32) * std)


class Linear(nn.Module):
    """Fully connected layer with ``N(0, gain^2 / fan_in)`` weights drawn from an explicit generator."""

    def __init__(self, fan_in, fan_out, gen, bias=True, gain=1.0, bias_init=0.0):
        super().__init__()
        self.weight = _normal((fan_out, fan_in), gen, gain / math.sqrt(fan_in))
        self.bias = nn.Parameter(torch.full((fan_out,), float(bias_init))) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class ModulatedConv(nn.Module):
    """Style-modulated convolution.

    The affine style scales the kernel's input channels; with ``demodulate``
    every output filter is then renormalised to unit L2 norm.
    """

    def __init__(self, cin, cout, kernel, w_dim, gen, demodulate=True, gain=1.0):
        super().__init__()
        self.affine = Linear(w_dim, cin, gen, bias_init=1.0)
        self.weight = _normal((cout, cin, kernel, kernel), gen, gain / math.sqrt(cin * kernel * kernel))
        self.bias = nn.Parameter(torch.zeros(cout))
        self.demodulate = demodulate
        self.padding = kernel // 2

    def forward(self, x, w):
        b, cin, h, wd = x.shape
        if cin != self.weight.shape[1]:
            raise ShapeError(f"expected {self.weight.shape[1]} input channels, got {cin}")
        styles = self.affine(w)  # (B, Cin)
        weight = self.weight[None] * styles[:, None, :, None, None]
        if self.demodulate:
            weight = weight * torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
        cout = weight.shape[1]
        out = F.conv2d(x.reshape(1, b * cin, h, wd), weight.reshape(b * cout, cin, *weight.shape[3:]),
                       padding=self.padding, groups=b)
        return out.reshape(b, cout, h, wd) + self.bias.reshape(1, -1, 1, 1)


class CrossAttention(nn.Module):
    """Pixels of a feature map attend to ``tokens`` slices of a conditioning vector.

    The vector is split into ``tokens`` tokens of equal width; queries come
    from the per-pixel features. The result is projected back to the feature
    width (no output bias) and returned as a residual.
    """

    def __init__(self, channels, w_dim, tokens, heads, attn_dim, gen):
        super().__init__()
        self.channels, self.tokens, self.heads = channels, tokens, heads
        self.token_dim = w_dim // tokens
        self.query = Linear(channels, attn_dim, gen)
        self.key = Linear(self.token_dim, attn_dim, gen)
        self.value = Linear(self.token_dim, attn_dim, gen)
        self.out = Linear(attn_dim, channels, gen, bias=False)

    def _qkv(self, x, cond):
        b, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"attention expects {self.channels} channels, got {c}")
        if cond.shape[-1] != self.token_dim * self.tokens or cond.shape[0] != b:
            raise ShapeError(f"condition must be (B={b}, {self.token_dim * self.tokens})")
        tok = cond.reshape(b, self.tokens, self.token_dim)
        q = self.query(x.flatten(2).transpose(1, 2))  # (B, HW, A)
        k, v = self.key(tok), self.value(tok)
        split = lambda t: t.reshape(b, t.shape[1], self.heads, -1).transpose(1, 2)  # noqa: E731
        return split(q), split(k), split(v)

    def weights(self, x, cond):
        """Attention weights (B, heads, HW, tokens)."""
        q, k, _ = self._qkv(x, cond)
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)

    def forward(self, x, cond):
        b, c, h, w = x.shape
        q, k, v = self._qkv(x, cond)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)
        mixed = (attn @ v).transpose(1, 2).reshape(b, h * w, -1)
        return self.out(mixed).transpose(1, 2).reshape(b, c, h, w)


def cross_attention(x, w_face, module: CrossAttention):
    """Residual of ``module`` for features ``x`` (B, C, H, W) conditioned on ``w_face`` (B, w_dim)."""
    return module(x, w_face)


def cfg_blend(x_cond: torch.Tensor, x_uncond: torch.Tensor, omega: float) -> torch.Tensor:
    """``omega * x_cond + (1 - omega) * x_uncond``; the endpoints return the inputs themselves."""
    if x_cond.shape != x_uncond.shape:
        raise ShapeError(f"cannot blend {tuple(x_cond.shape)} with {tuple(x_uncond.shape)}")
    if omega == 1:
        return x_cond
    if omega == 0:
        return x_uncond
    return omega * x_cond + (1.0 - omega) * x_uncond


def upsample(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def lrelu(x):
    return F.leaky_relu(x, LRELU_SLOPE)
