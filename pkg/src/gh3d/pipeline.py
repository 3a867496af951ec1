"""Generator output -> blended hair mesh -> Gaussians -> images, plus editing utilities."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np
import torch

from .data import rigs, templates
from .errors import ConfigurationError
from .hair.blend import HairBlendModel, blend_hair_shape, build_blend_model
from .hair.family import hairstyle_family
from .nets.generator import Generator, GeneratorOutput, generate_from_w, mapping_forward
from .render.rasterizer import render_torch
from .scene.rig import FACE_GAMMA, HAIR_GAMMA, spawn_gaussians
from .scene.types import FACE, FACE_MESH_LABEL, HAIR, HAIR_MESH_LABEL, CameraPose, GaussianSet, GaussianTextureMap
from .silhouette import render_mesh_labels_torch

DEFAULT_PITCH = 10.0
DEFAULT_RADIUS = 600.0
DEFAULT_TARGET = (0.0, 12.0, 0.0)


@lru_cache(maxsize=4)
def default_blend_model(count: int = 12, seed: int = 0, num_coeffs: int = 32) -> HairBlendModel:
    """Blend model over ``count`` procedural hairstyles of the scene hair template."""
    meshes, _ = hairstyle_family(templates()[1], count, seed)
    return build_blend_model(meshes, num_coeffs)


def sweep_cameras(num_views: int = 5, yaw_start: float = 0.0, yaw_end: float = 180.0) -> List[CameraPose]:
    """Evenly spaced orbit cameras from ``yaw_start`` to ``yaw_end`` inclusive."""
    if num_views < 1:
        raise ConfigurationError("a yaw sweep needs at least one view")
    yaws = np.linspace(yaw_start, yaw_end, num_views) if num_views > 1 else np.array([yaw_start])
    return [CameraPose.orbit(float(y), DEFAULT_PITCH, DEFAULT_RADIUS, DEFAULT_TARGET) for y in yaws]


def sample_gaussians(out: GeneratorOutput, model: HairBlendModel, index: int = 0):
    """Gaussians of sample ``index`` and its hair vertices (differentiable in textures and theta)."""
    hair_tex, face_tex = out.hair[index], out.face[index]
    face_rig, hair_rig = rigs(int(hair_tex.shape[0]))
    dtype = hair_tex.dtype
    hair_v = blend_hair_shape(model, out.theta[index].to(dtype))
    face_v = torch.as_tensor(templates()[0].vertices, dtype=dtype)
    face = spawn_gaussians(GaussianTextureMap(face_tex), face_rig, face_v, FACE_GAMMA, FACE)
    hair = spawn_gaussians(GaussianTextureMap(hair_tex), hair_rig, hair_v, HAIR_GAMMA, HAIR)
    return GaussianSet.concat([face, hair]), hair_v


@dataclass
class SampleRender:
    rgb: torch.Tensor  # (H, W, 3)
    mask: torch.Tensor  # (H, W)
    seg: torch.Tensor  # (H, W, 3)
    gaussians: GaussianSet
    hair_vertices: torch.Tensor  # (V, 3)


def render_sample(out: GeneratorOutput, model: HairBlendModel, camera: CameraPose, image_size: int,
                  index: int = 0, background=(0.0, 0.0, 0.0)) -> SampleRender:
    gset, hair_v = sample_gaussians(out, model, index)
    rgb, mask, seg = render_torch(gset, camera, (image_size, image_size), background)
    return SampleRender(rgb, mask, seg, gset, hair_v)


def render_mesh_seg(hair_v: torch.Tensor, camera: CameraPose, image_size: int) -> torch.Tensor:
    """Scalar label render of the face template and the given hair vertices."""
    face, hair = templates()
    face_v = torch.as_tensor(face.vertices, dtype=hair_v.dtype)
    return render_mesh_labels_torch([face_v, hair_v], [face.faces, hair.faces], [FACE_MESH_LABEL, HAIR_MESH_LABEL],
                                    camera, (image_size, image_size))


@dataclass
class EditResult:
    output: GeneratorOutput
    images: List[SampleRender]
    cameras: List[CameraPose]


def _render_views(out: GeneratorOutput, model, cameras, image_size, background) -> List[SampleRender]:
    with torch.no_grad():
        return [render_sample(out, model, cam, image_size, background=background) for cam in cameras]


def edit_hairstyle(net: Generator, z_face_source, z_hair_source, camera: CameraPose,
                   omega: Optional[float] = None, model: Optional[HairBlendModel] = None,
                   cameras: Optional[Sequence[CameraPose]] = None, image_size: int = 64,
                   background=(0.0, 0.0, 0.0)) -> EditResult:
    """Composite of the face latent of one source and the hair latent (and shape) of another.

    ``camera`` conditions the mapping; ``cameras`` (default: 5 views over
    0..180 degrees) are the rendering views.
    """
    if net is None:
        raise ConfigurationError("editing needs generator parameters")
    model = model or default_blend_model(num_coeffs=net.cfg.num_coeffs)
    cameras = list(cameras) if cameras is not None else sweep_cameras()
    with torch.no_grad():
        _, w_face = mapping_forward(net, z_face_source, camera)
        w_hair, _ = mapping_forward(net, z_hair_source, camera)
        out = generate_from_w(net, w_hair, w_face, omega)
    return EditResult(out, _render_views(out, model, cameras, image_size, background), cameras)


def cfg_sweep(net: Generator, z, camera: CameraPose, omegas: Sequence[float] = (0.0, 0.5, 1.0),
              model: Optional[HairBlendModel] = None, cameras: Optional[Sequence[CameraPose]] = None,
              image_size: int = 64, background=(0.0, 0.0, 0.0)) -> List[EditResult]:
    """One rendered image set per guidance strength."""
    model = model or default_blend_model(num_coeffs=net.cfg.num_coeffs)
    cameras = list(cameras) if cameras is not None else sweep_cameras()
    results = []
    for omega in omegas:
        with torch.no_grad():
            w_hair, w_face = mapping_forward(net, z, camera)
            out = generate_from_w(net, w_hair, w_face, omega)
        results.append(EditResult(out, _render_views(out, model, cameras, image_size, background), cameras))
    return results


__all__ = ["default_blend_model", "sweep_cameras", "sample_gaussians", "SampleRender", "render_sample",
           "render_mesh_seg", "EditResult", "edit_hairstyle", "cfg_sweep"]
