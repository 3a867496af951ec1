"""Toy adversarial training with reconstruction supervision from synthetic scenes."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .data import SyntheticScene, rigs
from .errors import ConfigurationError, NumericError
from .hair.blend import HairBlendModel
from .losses import (LossWeights, adv_loss_d, adv_loss_g, l_mask, l_pos_reg, l_rgb, l_scale_reg, l_seg,
                     l_seg_mesh, l_uv_tv, r1_penalty, total_loss)
from .nets.checkpoint import save_checkpoint
from .nets.config import SynthesisConfig
from .nets.discriminator import Discriminator, discriminator_forward
from .nets.generator import Generator, generate
from .pipeline import default_blend_model, render_mesh_seg, render_sample


def toy_net_config() -> SynthesisConfig:
    """16x16 textures rendered at 32x32."""
    return SynthesisConfig(output_resolution=16, image_resolution=32)


@dataclass
class TrainConfig:
    steps: int = 200
    seed: int = 0
    lr_g: float = 5e-4
    lr_d: float = 5e-4
    betas: tuple = (0.0, 0.99)
    pose_swap_prob: float = 0.8
    weights: LossWeights = LossWeights()
    net: SynthesisConfig = field(default_factory=toy_net_config)
    checkpoint_every: int = 100
    log_every: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if not 0.0 <= self.pose_swap_prob <= 1.0:
            raise ConfigurationError("pose-swap probability must lie in [0, 1]")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigurationError("cadences must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigurationError("learning rates must be positive")


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    log: List[dict]
    drops: int
    swaps: int
    steps: int


def _finite(values: dict) -> List[str]:
    return [k for k, v in values.items() if isinstance(v, float) and not np.isfinite(v)]


def train_toy_gan(dataset: List[SyntheticScene], config: Optional[TrainConfig] = None,
                  out_dir: Optional[Path] = None, blend_model: Optional[HairBlendModel] = None) -> TrainResult:
    """Alternating generator/discriminator steps.

    Each step draws a scene and a rendering view. The generator is conditioned
    on that camera, or with probability ``pose_swap_prob`` on a different camera
    of the ring; reconstruction terms always compare against the rendering
    view's ground truth. The scene's paired latent is the generator input.
    Metrics go to ``out_dir/metrics.jsonl`` (one JSON object per logged step).
    """
    config = config or TrainConfig()
    if not dataset:
        raise ConfigurationError("training needs a nonempty dataset")
    cfg = config.net
    size = cfg.image_resolution
    if any(s.image_size != size for s in dataset):
        raise ConfigurationError(f"dataset images must be {size}x{size} to match the discriminator")
    if any(s.latent.shape[0] != cfg.z_dim for s in dataset):
        raise ConfigurationError("scene latents do not match z_dim")
    model = blend_model or default_blend_model(num_coeffs=cfg.num_coeffs)
    face_rig, hair_rig = rigs(cfg.output_resolution)
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng([config.seed, 1])
    G = Generator(cfg, seed=config.seed)
    D = Discriminator(cfg, seed=config.seed + 1)
    opt_g = torch.optim.Adam(G.parameters(), lr=config.lr_g, betas=tuple(config.betas))
    opt_d = torch.optim.Adam(D.parameters(), lr=config.lr_d, betas=tuple(config.betas))
    w = config.weights
    log: List[dict] = []
    drops = swaps = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "metrics.jsonl", "w")
    modules = {"generator": G, "discriminator": D}

    def d_call(rgb, mask, camera):
        return discriminator_forward(D, rgb, mask, camera)

    last_good = None
    step = 0
    try:
        for step in range(config.steps):
            last_good = {k: copy.deepcopy(m.state_dict()) for k, m in modules.items()}
            scene = dataset[int(rng.integers(len(dataset)))]
            view = int(rng.integers(scene.num_views))
            cam = scene.cameras[view]
            swapped = scene.num_views > 1 and bool(rng.random() < config.pose_swap_prob)
            cond_cam = cam
            if swapped:
                other = int(rng.integers(scene.num_views - 1))
                cond_cam = scene.cameras[other + (other >= view)]
            t_rgb = torch.as_tensor(scene.rgb[view], dtype=torch.float32)
            t_mask = torch.as_tensor(scene.mask[view], dtype=torch.float32)
            t_seg = torch.as_tensor(scene.seg_class[view])

            out = generate(G, torch.as_tensor(scene.latent, dtype=torch.float32), cond_cam, drop=drop_rng)
            swaps += swapped
            drops += out.dropped
            fake = render_sample(out, model, cam, size, background=scene.background)
            mesh_seg = render_mesh_seg(fake.hair_vertices, cam, size)
            report = total_loss(
                w, adv=adv_loss_g(d_call(fake.rgb, fake.mask, cam)),
                rgb=l_rgb(fake.rgb, t_rgb), mask=l_mask(fake.mask, t_mask), seg=l_seg(fake.seg, t_seg),
                seg_mesh=l_seg_mesh(mesh_seg, t_seg), pos=l_pos_reg(fake.gaussians.deltas),
                scale=l_scale_reg(fake.gaussians.scales),
                uv=l_uv_tv(out.face[0], face_rig.valid) + l_uv_tv(out.hair[0], hair_rig.valid))
            opt_g.zero_grad()
            report.total.backward()
            opt_g.step()

            d_adv = adv_loss_d(d_call(t_rgb, t_mask, cam), d_call(fake.rgb.detach(), fake.mask.detach(), cam))
            r1 = r1_penalty(d_call, t_rgb, t_mask, cam, w.r1_rgb, w.r1_mask)
            opt_d.zero_grad()
            (d_adv + r1).backward()
            opt_d.step()

            values = {"step": step, **{f"g_{k}": v for k, v in report.as_dict().items()},
                      "d_adv": float(d_adv.detach()), "d_r1": float(r1.detach()),
                      "dropped": bool(out.dropped), "swapped": bool(swapped), "view": view}
            bad = _finite(values)
            if bad:
                raise NumericError(f"non-finite losses {bad}", iteration=step)
            if step % config.log_every == 0 or step == config.steps - 1:
                log.append(values)
                if log_file is not None:
                    log_file.write(json.dumps(values) + "\n")
            if out_dir is not None and ((step + 1) % config.checkpoint_every == 0 or step == config.steps - 1):
                save_checkpoint(out_dir / "checkpoint.3dgh", modules)
    except NumericError as err:
        if err.iteration is None:
            err.iteration = step
        if out_dir is not None and last_good is not None:
            for k, m in modules.items():
                m.load_state_dict(last_good[k])
            save_checkpoint(out_dir / "checkpoint_last_good.3dgh", modules)
        raise
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(G, D, log, drops, swaps, config.steps)
