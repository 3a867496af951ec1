"""Procedural multi-view scenes with exact ground truth."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from .errors import ConfigurationError, DataError
from .hair.family import HairstyleParams, hairstyle
from .render.rasterizer import reference_render
from .scene.io import load_obj, load_table, save_obj, save_table
from .scene.meshes import face_head, hair_cap
from .scene.rig import FACE_GAMMA, HAIR_GAMMA, build_uv_rig, spawn_gaussians
from .scene.types import (COLOR, FACE, HAIR, NUM_CHANNELS, OPACITY, QUAT, SCALE, CameraPose, GaussianSet,
                          GaussianTextureMap, TemplateMesh, UvRig)
from .silhouette import LabeledMeshScene, render_mesh_labels

HAIR_CAP_RADIUS = 110.0  # clears the face mesh (max radius ~101) for every sampled style


@dataclass(frozen=True)
class DatasetSpec:
    """Scene count, camera ring and resolutions.

    The ring places ``num_views`` cameras at yaw ``k * 360 / num_views`` degrees
    with a fixed pitch, all looking at the origin from ``radius`` mm.
    """

    num_scenes: int = 1
    num_views: int = 8
    radius: float = 600.0
    pitch: float = 10.0
    focal: float = 2.0
    target_height: float = 12.0  # ring looks at (0, target_height, 0)
    image_size: int = 64
    texture_resolution: int = 64
    z_dim: int = 512
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.num_scenes < 1 or self.num_views < 1:
            raise ConfigurationError("need at least one scene and one view")
        if self.image_size < 4 or self.texture_resolution < 2:
            raise ConfigurationError("image size must be >= 4 and texture resolution >= 2")
        if self.radius <= HAIR_CAP_RADIUS * 1.5:
            raise ConfigurationError("camera ring must lie well outside the head")

    def yaws(self) -> np.ndarray:
        return np.arange(self.num_views) * (360.0 / self.num_views)

    def cameras(self) -> List[CameraPose]:
        target = (0.0, self.target_height, 0.0)
        return [CameraPose.orbit(y, self.pitch, self.radius, target, self.focal) for y in self.yaws()]


@dataclass
class SyntheticScene:
    face_mesh: TemplateMesh
    hair_mesh: TemplateMesh
    hair_params: HairstyleParams
    face_texture: np.ndarray  # (R, R, 14) raw, float32-representable
    hair_texture: np.ndarray
    cameras: List[CameraPose]
    yaws: np.ndarray
    rgb: np.ndarray  # (N, H, W, 3)
    mask: np.ndarray  # (N, H, W)
    seg: np.ndarray  # (N, H, W, 3) composited label channels
    seg_class: np.ndarray  # (N, H, W) int: 0 background, 1 face, 2 hair
    mesh_seg: np.ndarray  # (N, H, W) scalar mesh-label render
    latent: np.ndarray  # (z_dim,) latent paired with this scene
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def num_views(self) -> int:
        return len(self.cameras)

    @property
    def image_size(self) -> int:
        return self.rgb.shape[1]


@lru_cache(maxsize=8)
def templates() -> Tuple[TemplateMesh, TemplateMesh]:
    """(face, hair) template meshes shared by every scene."""
    return face_head(), hair_cap(radius=HAIR_CAP_RADIUS)


@lru_cache(maxsize=8)
def rigs(resolution: int) -> Tuple[UvRig, UvRig]:
    face, hair = templates()
    return build_uv_rig(face, resolution), build_uv_rig(hair, resolution)


def _uv_grid(r: int) -> Tuple[np.ndarray, np.ndarray]:
    c = (np.arange(r) + 0.5) / r
    return np.meshgrid(c, c)  # u varies along columns, v along rows


def _smooth_field(rng: np.random.Generator, u, v, terms=4, max_freq=3):
    out = np.zeros_like(u)
    for _ in range(terms):
        fu, fv = rng.integers(1, max_freq + 1, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.normal() * np.sin(2 * np.pi * (fu * u + fv * v) + phase)
    return out / np.sqrt(terms)


def _logit(p):
    return np.log(p) - np.log1p(-p)


def procedural_texture(rng: np.random.Generator, resolution: int, base_rgb, variation: float,
                       log_scale: float, stripes: float = 0.0) -> np.ndarray:
    """Raw texture with zero offsets, mildly varying rotations/scales and a smooth colour pattern."""
    u, v = _uv_grid(resolution)
    tex = np.zeros((resolution, resolution, NUM_CHANNELS))
    tex[..., QUAT.start] = 1.0
    for k in range(1, 4):
        tex[..., QUAT.start + k] = 0.25 * _smooth_field(rng, u, v)
    for k in range(3):
        tex[..., SCALE.start + k] = log_scale + 0.1 * _smooth_field(rng, u, v)
    pattern = variation * _smooth_field(rng, u, v)
    if stripes:
        pattern = pattern + stripes * np.sin(2 * np.pi * 12 * u)
    for k in range(3):
        c = np.clip(base_rgb[k] + pattern * (0.6 + 0.4 * k / 2) + 0.03 * _smooth_field(rng, u, v), 0.05, 0.95)
        tex[..., COLOR.start + k] = _logit(c)
    tex[..., OPACITY] = _logit(np.clip(0.93 + 0.04 * _smooth_field(rng, u, v), 0.5, 0.99))
    return tex.astype(np.float32).astype(np.float64)


def scene_gaussians(face_mesh: TemplateMesh, hair_mesh: TemplateMesh, face_texture, hair_texture,
                    resolution: Optional[int] = None) -> GaussianSet:
    """Face then hair Gaussians spawned from raw textures (numpy or torch)."""
    resolution = resolution or int(face_texture.shape[0])
    face_rig, hair_rig = rigs(resolution)
    face = spawn_gaussians(GaussianTextureMap(face_texture), face_rig, face_mesh, FACE_GAMMA, FACE)
    hair = spawn_gaussians(GaussianTextureMap(hair_texture), hair_rig, hair_mesh, HAIR_GAMMA, HAIR)
    return GaussianSet.concat([face, hair])


def seg_classes(mask: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """Background where coverage is at most one half, else the stronger of face and hair."""
    return np.where(mask > 0.5, 1 + np.argmax(seg[..., 1:3], axis=-1), 0).astype(np.int64)


def render_ground_truth(face_mesh, hair_mesh, face_texture, hair_texture, cameras, image_size, background):
    gset = scene_gaussians(face_mesh, hair_mesh, face_texture, hair_texture)
    labelled = LabeledMeshScene([face_mesh, hair_mesh])
    rgb, mask, seg, mesh_seg = [], [], [], []
    for cam in cameras:
        out = reference_render(gset, cam, (image_size, image_size), background)
        rgb.append(out.rgb)
        mask.append(out.mask)
        seg.append(out.seg)
        mesh_seg.append(render_mesh_labels(labelled, cam, (image_size, image_size)))
    rgb, mask, seg = np.stack(rgb), np.stack(mask), np.stack(seg)
    return rgb, mask, seg, seg_classes(mask, seg), np.stack(mesh_seg)


def make_scene(spec: DatasetSpec, rng: np.random.Generator) -> SyntheticScene:
    face_t, hair_t = templates()
    params = HairstyleParams.sample(rng)
    hair_mesh = hairstyle(hair_t, params)
    r = spec.texture_resolution
    skin = np.array([0.78, 0.58, 0.47]) + rng.uniform(-0.08, 0.08, 3)
    hair_rgb = np.array([0.30, 0.20, 0.12]) * rng.uniform(0.5, 2.2) + rng.uniform(-0.05, 0.05, 3)
    # sized from the texel spacing so the surfaces render closed while staying inside the scale prior
    face_tex = procedural_texture(rng, r, skin, 0.10, np.log(2.0 * np.pi * 90.0 / r * 0.4))
    hair_tex = procedural_texture(rng, r, np.clip(hair_rgb, 0.05, 0.9), 0.08,
                                  np.log(2.0 * np.pi * HAIR_CAP_RADIUS / r * 0.4), stripes=0.06)
    latent = rng.standard_normal(spec.z_dim).astype(np.float32).astype(np.float64)
    cameras = spec.cameras()
    rgb, mask, seg, seg_class, mesh_seg = render_ground_truth(face_t, hair_mesh, face_tex, hair_tex, cameras,
                                                              spec.image_size, spec.background)
    return SyntheticScene(face_t, hair_mesh, params, face_tex, hair_tex, cameras, spec.yaws(), rgb, mask, seg,
                          seg_class, mesh_seg, latent, tuple(spec.background))


def make_synthetic_dataset(spec: DatasetSpec = DatasetSpec(), seed: int = 0) -> List[SyntheticScene]:
    """``spec.num_scenes`` scenes; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return [make_scene(spec, rng) for _ in range(spec.num_scenes)]


# ---------------------------------------------------------------------------- storage

def save_scene(directory, scene: SyntheticScene) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_obj(d / "face.obj", scene.face_mesh)
    save_obj(d / "hair.obj", scene.hair_mesh)
    save_table(d / "scene.3dgh", {
        "face_texture": scene.face_texture, "hair_texture": scene.hair_texture,
        "rgb": scene.rgb, "mask": scene.mask, "seg": scene.seg, "seg_class": scene.seg_class,
        "mesh_seg": scene.mesh_seg, "latent": scene.latent,
    })
    # cameras live in the JSON so they round-trip exactly (the table stores f32)
    meta = {"hair_params": asdict(scene.hair_params), "background": list(scene.background),
            "cameras": [c.to_vector().tolist() for c in scene.cameras], "yaws": np.asarray(scene.yaws).tolist()}
    (d / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_scene(directory) -> SyntheticScene:
    d = Path(directory)
    try:
        table = load_table(d / "scene.3dgh")
        meta = json.loads((d / "scene.json").read_text())
        face, hair = load_obj(d / "face.obj"), load_obj(d / "hair.obj")
    except FileNotFoundError as exc:
        raise DataError(f"incomplete scene directory {d}: {exc.filename}") from exc
    f64 = lambda k: np.asarray(table[k], dtype=np.float64)  # noqa: E731
    cams = [CameraPose.from_vector(np.asarray(v, dtype=np.float64)) for v in meta["cameras"]]
    yaws = np.asarray(meta["yaws"], dtype=np.float64)
    return SyntheticScene(face, hair, HairstyleParams(**meta["hair_params"]), f64("face_texture"),
                          f64("hair_texture"), cams, yaws, f64("rgb"), f64("mask"), f64("seg"),
                          f64("seg_class").astype(np.int64), f64("mesh_seg"), f64("latent"),
                          tuple(meta["background"]))


def save_dataset(directory, scenes: List[SyntheticScene]) -> None:
    for i, s in enumerate(scenes):
        save_scene(Path(directory) / f"scene_{i:03d}", s)


def load_dataset(directory) -> List[SyntheticScene]:
    dirs = sorted(p for p in Path(directory).glob("scene_*") if p.is_dir())
    if not dirs:
        raise DataError(f"no scenes under {directory}")
    return [load_scene(p) for p in dirs]
