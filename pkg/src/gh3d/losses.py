"""Training objectives: adversarial, reconstruction, segmentation and regularisers."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DataError, NumericError, ShapeError
from .scene.types import DELTA, GaussianTextureMap

SEG_EPS = 1e-8
S_MIN, S_MAX = 0.2, 5.0
SCALE_BELOW_WEIGHT = 10.0


def _t(x, dtype=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype or torch.float64)


def _same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def adv_loss_g(score_fake) -> torch.Tensor:
    """Non-saturating generator loss, mean over the batch."""
    return F.softplus(-_t(score_fake)).mean()


def adv_loss_d(score_real, score_fake) -> torch.Tensor:
    return (F.softplus(_t(score_fake)).mean() + F.softplus(-_t(score_real)).mean())


def r1_penalty(discriminator: Callable, rgb, mask, camera=None, strength_rgb: float = 1.0,
               strength_mask: float = 1.0) -> torch.Tensor:
    """Half squared gradient norm of the real score w.r.t. the RGB and mask inputs.

    ``discriminator(rgb, mask, camera)`` returns one score per sample; the
    penalty is averaged over the batch. Differentiable in the discriminator's
    parameters (double backward).
    """
    rgb = _t(rgb).detach().requires_grad_(True)
    mask = _t(mask, rgb.dtype).detach().requires_grad_(True)
    score = discriminator(rgb, mask, camera)
    g_rgb, g_mask = torch.autograd.grad(score.sum(), [rgb, mask], create_graph=True, allow_unused=True)
    batch = score.numel()
    total = torch.zeros((), dtype=rgb.dtype)
    if g_rgb is not None:
        total = total + strength_rgb * g_rgb.pow(2).sum()
    if g_mask is not None:
        total = total + strength_mask * g_mask.pow(2).sum()
    if not torch.isfinite(total):
        raise NumericError("non-finite R1 gradient")
    return 0.5 * total / batch


def l_rgb(pred, target) -> torch.Tensor:
    pred, target = _t(pred), _t(target)
    _same_shape(pred, target)
    return (pred - target.to(pred.dtype)).abs().mean()


def l_mask(pred, target) -> torch.Tensor:
    return l_rgb(pred, target)


def _class_indices(target) -> torch.Tensor:
    t = _t(target)
    if t.is_floating_point():
        if not torch.equal(t, t.round()):
            raise DataError("segmentation targets must be integer class indices")
        t = t.round()
    t = t.long()
    if t.numel() and (t.min() < 0 or t.max() > 2):
        raise DataError("segmentation targets must lie in {0, 1, 2}")
    return t


def l_seg(pred_seg, target_seg) -> torch.Tensor:
    """Mean of ``-log(p[target] + eps)``; the render is used as probabilities directly."""
    pred = _t(pred_seg)
    target = _class_indices(target_seg)
    if pred.shape[:-1] != target.shape or pred.shape[-1] != 3:
        raise ShapeError(f"seg prediction {tuple(pred.shape)} does not match targets {tuple(target.shape)}")
    picked = torch.gather(pred, -1, target[..., None])[..., 0]
    return -(picked + SEG_EPS).log().mean()


def l_seg_mesh(pred, target_seg) -> torch.Tensor:
    """L1 between the scalar mesh-label render and the target classes read as scalars."""
    pred = _t(pred)
    target = _class_indices(target_seg).to(pred.dtype)
    _same_shape(pred, target)
    return (pred - target).abs().mean()


def l_pos_reg(deltas) -> torch.Tensor:
    """Sum of Euclidean norms of the per-Gaussian offsets (use ``pos_reg_count`` for the count)."""
    d = _t(deltas)
    if d.numel() == 0:
        return d.sum()
    # sqrt has an unbounded slope at 0; use a safe norm with zero subgradient there
    sq = d.pow(2).sum(-1)
    safe = torch.where(sq > 0, sq, torch.ones_like(sq))
    return torch.where(sq > 0, safe.sqrt(), torch.zeros_like(sq)).sum()


def pos_reg_count(deltas) -> int:
    return int(_t(deltas).reshape(-1, 3).shape[0])


def l_scale_reg(scales, s_min: float = S_MIN, s_max: float = S_MAX) -> torch.Tensor:
    """Per component: 10|s - s_min| below the box, (s - s_max)^2 above it, summed."""
    s = _t(scales)
    below = SCALE_BELOW_WEIGHT * (s_min - s).clamp(min=0.0)
    above = (s - s_max).clamp(min=0.0).pow(2)
    return (below + above).sum()


def l_uv_tv(texture, valid=None) -> torch.Tensor:
    """Mean L1 difference of the delta channels over adjacent texel pairs with both texels valid."""
    data = texture.data if isinstance(texture, GaussianTextureMap) else texture
    d = _t(data)[..., DELTA]
    h, w = d.shape[:2]
    v = torch.ones((h, w), dtype=torch.bool) if valid is None else torch.as_tensor(np.asarray(valid), dtype=torch.bool)
    if tuple(v.shape) != (h, w):
        raise ShapeError("valid mask must match the texture resolution")
    horiz = (d[:, 1:] - d[:, :-1]).abs().sum(-1)
    vert = (d[1:] - d[:-1]).abs().sum(-1)
    mh = v[:, 1:] & v[:, :-1]
    mv = v[1:] & v[:-1]
    count = int(mh.sum() + mv.sum())
    if count == 0:
        return d.sum() * 0.0
    return (horiz[mh].sum() + vert[mv].sum()) / count


@dataclass(frozen=True)
class LossWeights:
    rgb: float = 10.0
    mask: float = 10.0
    seg: float = 1.0
    seg_mesh: float = 100.0
    pos: float = 0.1
    scale: float = 1.0
    uv: float = 1.0
    adv: float = 1.0
    r1_rgb: float = 1.0
    r1_mask: float = 1.0

    def __post_init__(self):
        if any(getattr(self, f.name) < 0 for f in fields(self)):
            raise ConfigurationError("loss weights must be nonnegative")


TERMS = ("rgb", "mask", "seg", "seg_mesh", "pos", "scale", "uv")


@dataclass
class LossReport:
    """Individual terms plus ``total``; tensors keep the graph, ``as_dict`` gives floats."""

    total: torch.Tensor
    terms: dict

    def as_dict(self) -> dict:
        out = {k: float(v.detach()) for k, v in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out

    def to_json(self, step: int) -> str:
        return json.dumps({"step": int(step), **self.as_dict()}, sort_keys=False)


def total_loss(weights: LossWeights = LossWeights(), adv: Optional[torch.Tensor] = None, **terms) -> LossReport:
    """Weighted sum ``adv_weight * adv + sum_k lambda_k * term_k`` over the terms given.

    Terms are passed by name (``rgb``, ``mask``, ``seg``, ``seg_mesh``, ``pos``,
    ``scale``, ``uv``); missing ones count as zero.
    """
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise ConfigurationError(f"unknown loss terms: {sorted(unknown)}")
    values = {k: _t(terms[k]) if k in terms else torch.zeros((), dtype=torch.float64) for k in TERMS}
    if adv is not None:
        values["adv"] = _t(adv)
    total = sum((getattr(weights, k) * v for k, v in values.items()), torch.zeros((), dtype=torch.float64))
    if not torch.isfinite(total):
        raise NumericError("non-finite total loss")
    return LossReport(total, values)
