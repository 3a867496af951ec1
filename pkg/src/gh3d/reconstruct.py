"""Direct texture optimisation against a synthetic scene (no generator)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import torch

from .data import SyntheticScene, rigs, seg_classes
from .errors import ConfigurationError, NumericError
from .losses import LossWeights, l_mask, l_pos_reg, l_rgb, l_scale_reg, l_seg, l_uv_tv, total_loss
from .render.rasterizer import render_torch
from .scene.rig import FACE_GAMMA, HAIR_GAMMA, spawn_gaussians
from .scene.types import (COLOR, DELTA, FACE, HAIR, NUM_CHANNELS, OPACITY, QUAT, SCALE, GaussianSet,
                          GaussianTextureMap)

CHANNEL_GROUPS = {"delta": DELTA, "quat": QUAT, "scale": SCALE, "color": COLOR, "opacity": slice(OPACITY, OPACITY + 1)}


@dataclass
class GaussianFitConfig:
    iterations: int = 2000
    lr: Dict[str, float] = field(default_factory=lambda: {
        "delta": 0.05, "quat": 0.01, "scale": 0.01, "color": 0.05, "opacity": 0.05})
    weights: LossWeights = LossWeights()
    init: str = "random"  # or "ground_truth"
    seed: int = 0
    init_log_scale: float = float(np.log(3.0))

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.init not in ("random", "ground_truth"):
            raise ConfigurationError(f"unknown init {self.init!r}")
        if set(self.lr) != set(CHANNEL_GROUPS) or any(v <= 0 for v in self.lr.values()):
            raise ConfigurationError(f"learning rates needed for {sorted(CHANNEL_GROUPS)}")


@dataclass
class ViewMetrics:
    psnr: float
    seg_accuracy: float
    mask_iou: float


@dataclass
class GaussianFitResult:
    face_texture: np.ndarray
    hair_texture: np.ndarray
    trace: List[dict]  # one loss report per iteration
    initial: List[ViewMetrics]
    final: List[ViewMetrics]

    def mean(self, which: str = "final") -> ViewMetrics:
        views = getattr(self, which)
        return ViewMetrics(*(float(np.mean([getattr(v, k) for v in views])) for k in ("psnr", "seg_accuracy",
                                                                                     "mask_iou")))


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


def mask_iou(pred: np.ndarray, target: np.ndarray) -> float:
    a, b = np.asarray(pred) > 0.5, np.asarray(target) > 0.5
    union = np.logical_or(a, b).sum()
    return 1.0 if union == 0 else float(np.logical_and(a, b).sum() / union)


def random_texture(rng: np.random.Generator, resolution: int, log_scale: float) -> np.ndarray:
    """Seeded random raw texture around neutral values."""
    tex = np.zeros((resolution, resolution, NUM_CHANNELS))
    shape = (resolution, resolution)
    tex[..., DELTA] = rng.normal(0.0, 1.0, shape + (3,))
    tex[..., QUAT] = np.array([1.0, 0, 0, 0]) + rng.normal(0.0, 0.3, shape + (4,))
    tex[..., SCALE] = log_scale + rng.normal(0.0, 0.3, shape + (3,))
    tex[..., COLOR] = rng.normal(0.0, 1.0, shape + (3,))
    tex[..., OPACITY] = rng.normal(0.0, 1.0, shape)
    return tex


def _spawn(scene: SyntheticScene, face_tex, hair_tex):
    face_rig, hair_rig = rigs(int(face_tex.shape[0]))
    face = spawn_gaussians(GaussianTextureMap(face_tex), face_rig, scene.face_mesh, FACE_GAMMA, FACE)
    hair = spawn_gaussians(GaussianTextureMap(hair_tex), hair_rig, scene.hair_mesh, HAIR_GAMMA, HAIR)
    return GaussianSet.concat([face, hair])


def evaluate_views(scene: SyntheticScene, face_tex, hair_tex) -> List[ViewMetrics]:
    with torch.no_grad():
        gset = _spawn(scene, torch.as_tensor(face_tex), torch.as_tensor(hair_tex))
        out = []
        size = (scene.image_size, scene.image_size)
        for i, cam in enumerate(scene.cameras):
            rgb, mask, seg = (t.numpy() for t in render_torch(gset, cam, size, scene.background))
            acc = float(np.mean(seg_classes(mask, seg) == scene.seg_class[i]))
            out.append(ViewMetrics(psnr(rgb, scene.rgb[i]), acc, mask_iou(mask, scene.mask[i])))
    return out


def fit_gaussians(scene: SyntheticScene, config: Optional[GaussianFitConfig] = None,
                  callback: Optional[Callable[[int, dict], None]] = None) -> GaussianFitResult:
    """Adam over the raw face and hair textures against every view of ``scene``.

    Loss: weighted RGB/mask L1, segmentation cross-entropy and the position,
    scale and UV regularisers (mesh segmentation does not apply: the meshes are fixed).
    """
    config = config or GaussianFitConfig()
    if scene.num_views < 2:
        raise ConfigurationError("fit_gaussians needs at least two views")
    res = int(scene.face_texture.shape[0])
    if config.init == "ground_truth":
        init = [scene.face_texture.copy(), scene.hair_texture.copy()]
    else:
        rng = np.random.default_rng(config.seed)
        init = [random_texture(rng, res, config.init_log_scale) for _ in range(2)]
    face_rig, hair_rig = rigs(res)
    # one leaf tensor per channel group so each gets its own step size
    leaves = {part: {g: torch.tensor(t[..., sl], requires_grad=True) for g, sl in CHANNEL_GROUPS.items()}
              for part, t in zip(("face", "hair"), init)}
    optim = torch.optim.Adam([{"params": [leaves[p][g] for p in leaves], "lr": config.lr[g]}
                              for g in CHANNEL_GROUPS])
    targets = [(torch.as_tensor(scene.rgb[i]), torch.as_tensor(scene.mask[i]), torch.as_tensor(scene.seg_class[i]))
               for i in range(scene.num_views)]
    size = (scene.image_size, scene.image_size)

    def textures():
        return [torch.cat([leaves[p][g] for g in CHANNEL_GROUPS], dim=-1) for p in ("face", "hair")]

    initial = evaluate_views(scene, *(t.detach() for t in textures()))
    trace: List[dict] = []
    for it in range(config.iterations):
        face_tex, hair_tex = textures()
        gset = _spawn(scene, face_tex, hair_tex)
        rgb_l = mask_l = seg_l = 0.0
        for cam, (t_rgb, t_mask, t_seg) in zip(scene.cameras, targets):
            rgb, mask, seg = render_torch(gset, cam, size, scene.background)
            rgb_l = rgb_l + l_rgb(rgb, t_rgb)
            mask_l = mask_l + l_mask(mask, t_mask)
            seg_l = seg_l + l_seg(seg, t_seg)
        n = scene.num_views
        report = total_loss(config.weights, rgb=rgb_l / n, mask=mask_l / n, seg=seg_l / n,
                            pos=l_pos_reg(gset.deltas), scale=l_scale_reg(gset.scales),
                            uv=l_uv_tv(face_tex, face_rig.valid) + l_uv_tv(hair_tex, hair_rig.valid))
        values = report.as_dict()
        if not np.isfinite(values["total"]):
            raise NumericError("non-finite reconstruction loss", iteration=it)
        trace.append(values)
        if callback is not None:
            callback(it, values)
        optim.zero_grad()
        report.total.backward()
        optim.step()
    face_tex, hair_tex = (t.detach().numpy().copy() for t in textures())
    return GaussianFitResult(face_tex, hair_tex, trace, initial, evaluate_views(scene, face_tex, hair_tex))
