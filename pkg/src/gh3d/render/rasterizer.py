"""Tile-based Gaussian rasterizer, per-pixel reference renderer and analytic backward.

Splats are sorted globally by camera depth (ties by Gaussian index), binned
into 16x16 tiles and alpha-composited front to back. Inside a tile the list is
filtered once per 4x4 pixel block against each splat's extent, so pixels only
visit splats that can reach them; depth order is unchanged. RGB composites over a
background colour, the segmentation payload over the background label
``[1, 0, 0]`` and the mask is ``1 - T_final``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import torch

from ..errors import NumericError
from ..scene.types import CameraPose, GaussianSet
from . import _kernels as K
from .projection import Projected, project, project_backward

T_MIN = 1e-4
# Splats are binned out to this many standard deviations. Beyond it a splat's
# alpha is below opacity * exp(-18) ~ 1.5e-8, far inside the 1e-5 equivalence
# budget against the untruncated reference renderer.
RENDER_EXTENT_SIGMAS = 6.0
NUM_FEATURES = 7
SEG_BACKGROUND = np.array([1.0, 0.0, 0.0])


@dataclass
class Splat2D:
    mean: np.ndarray  # (2,) pixels
    cov2d: np.ndarray  # (2, 2), dilated
    depth: float
    features: np.ndarray  # colour then label
    opacity: float


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3)
    mask: np.ndarray  # (H, W)
    seg: np.ndarray  # (H, W, 3)
    transmittance: np.ndarray  # (H, W)


def _numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        return t.detach().cpu().numpy().astype(np.float64)
    return np.asarray(t, dtype=np.float64)


def _features(colors, labels):
    n = colors.shape[0]
    return np.concatenate([colors, labels, np.ones((n, 1))], axis=1)


def _background(background_rgb):
    return np.concatenate([np.asarray(background_rgb, dtype=np.float64).reshape(3), SEG_BACKGROUND, [0.0]])


def _split(img: np.ndarray, final_t: np.ndarray) -> RenderOutput:
    return RenderOutput(rgb=img[..., 0:3], mask=img[..., 6], seg=img[..., 3:6], transmittance=final_t)


class RenderFrame:
    """Forward state of one tiled render; ``backward`` replays it for gradients."""

    def __init__(self, gset: GaussianSet, camera: CameraPose, image_size, background_rgb=(0.0, 0.0, 0.0),
                 t_min: float = T_MIN, dtype=np.float64):
        self.camera = camera
        self.image_size = (int(image_size[0]), int(image_size[1]))
        self.dtype = np.dtype(dtype)
        self.t_min = float(t_min)
        width, height = self.image_size
        positions = _numpy(gset.positions)
        self.n = positions.shape[0]
        self.proj: Projected = project(positions, _numpy(gset.rotations), _numpy(gset.scales), camera,
                                       self.image_size, extent_sigmas=RENDER_EXTENT_SIGMAS, dtype=self.dtype)
        pr = self.proj
        idx = np.flatnonzero(pr.visible)
        order = idx[np.lexsort((idx, pr.depths[idx]))]
        self.order = order
        self.means = np.ascontiguousarray(pr.means2d[order], dtype=self.dtype)
        self.conics = np.ascontiguousarray(pr.conics[order], dtype=self.dtype)
        self.opac = np.ascontiguousarray(_numpy(gset.opacities)[order], dtype=self.dtype)
        self.feats = np.ascontiguousarray(_features(_numpy(gset.colors), _numpy(gset.labels))[order],
                                          dtype=self.dtype)
        self.bg = _background(background_rgb).astype(self.dtype)
        self.tiles_x = (width + K.TILE - 1) // K.TILE
        self.tiles_y = (height + K.TILE - 1) // K.TILE
        self.radii = np.ascontiguousarray(pr.radii[order], dtype=np.float64)
        self.tile_start, self.tile_gauss = K.bin_tiles(self.means.astype(np.float64), self.radii,
                                                       width, height, self.tiles_x, self.tiles_y)
        img = np.zeros((height, width, NUM_FEATURES), dtype=self.dtype)
        self.final_t = np.zeros((height, width), dtype=self.dtype)
        self.n_contrib = np.zeros((height, width), dtype=np.int64)
        K.forward_tiled(self.means, self.radii, self.conics, self.opac, self.feats, self.bg, self.tile_start, self.tile_gauss,
                        width, height, self.tiles_x, self.t_min, img, self.final_t, self.n_contrib)
        self.image = img
        self.output = _split(img, self.final_t)

    def backward(self, grad_rgb=None, grad_mask=None, grad_seg=None) -> Dict[str, np.ndarray]:
        width, height = self.image_size
        g = np.zeros((height, width, NUM_FEATURES), dtype=self.dtype)
        if grad_rgb is not None:
            g[..., 0:3] = _numpy(grad_rgb)
        if grad_seg is not None:
            g[..., 3:6] = _numpy(grad_seg)
        if grad_mask is not None:
            g[..., 6] = _numpy(grad_mask)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite upstream gradient")
        pair = np.zeros((self.tile_gauss.shape[0], 6 + NUM_FEATURES), dtype=self.dtype)
        K.backward_tiled(self.means, self.radii, self.conics, self.opac, self.feats, self.bg, self.tile_start,
                         self.tile_gauss, width, height, self.tiles_x, self.n_contrib, g, pair)
        sorted_grad = K.reduce_pairs(self.tile_gauss, pair, self.order.shape[0]).astype(np.float64)
        full = np.zeros((self.n, 6 + NUM_FEATURES))
        full[self.order] = sorted_grad
        g_pos, g_q, g_s = project_backward(self.proj, self.camera, self.image_size, full[:, 0:2], full[:, 2:5])
        cast = lambda a: a.astype(self.dtype)  # noqa: E731
        return {
            "positions": cast(g_pos),
            "rotations": cast(g_q),
            "scales": cast(g_s),
            "opacities": cast(full[:, 5]),
            "colors": cast(full[:, 6:9]),
            "labels": cast(full[:, 9:12]),
        }


def render(gset: GaussianSet, camera: CameraPose, image_size, background_rgb=(0.0, 0.0, 0.0),
           t_min: float = T_MIN, dtype=np.float64) -> RenderOutput:
    """Tiled render. ``t_min=0`` disables early termination."""
    return RenderFrame(gset, camera, image_size, background_rgb, t_min, dtype).output


def reference_render(gset: GaussianSet, camera: CameraPose, image_size, background_rgb=(0.0, 0.0, 0.0),
                     dtype=np.float64) -> RenderOutput:
    """Per-pixel oracle: every splat in front of the near plane, global sort, no early termination."""
    width, height = int(image_size[0]), int(image_size[1])
    positions = _numpy(gset.positions)
    pr = project(positions, _numpy(gset.rotations), _numpy(gset.scales), camera, (width, height),
                 extent_sigmas=np.inf, dtype=dtype)
    idx = np.flatnonzero(pr.visible)
    order = idx[np.lexsort((idx, pr.depths[idx]))]
    img = np.zeros((height, width, NUM_FEATURES), dtype=dtype)
    final_t = np.zeros((height, width), dtype=dtype)
    feats = _features(_numpy(gset.colors), _numpy(gset.labels))
    K.forward_reference(np.ascontiguousarray(pr.means2d[order]), np.ascontiguousarray(pr.conics[order]),
                        np.ascontiguousarray(_numpy(gset.opacities)[order], dtype=dtype),
                        np.ascontiguousarray(feats[order], dtype=dtype), _background(background_rgb).astype(dtype),
                        width, height, img, final_t)
    return _split(img, final_t)


def render_backward(gset: GaussianSet, camera: CameraPose, image_size, background_rgb=(0.0, 0.0, 0.0),
                    grad_rgb=None, grad_mask=None, grad_seg=None, t_min: float = T_MIN,
                    dtype=np.float64) -> Dict[str, np.ndarray]:
    """Gradients of ``sum(grad_rgb*rgb) + sum(grad_mask*mask) + sum(grad_seg*seg)`` w.r.t. every parameter.

    Rotation gradients are w.r.t. the quaternion as stored (propagated through
    the renderer's own normalization).
    """
    frame = RenderFrame(gset, camera, image_size, background_rgb, t_min, dtype)
    return frame.backward(grad_rgb, grad_mask, grad_seg)


def project_gaussian(gaussian, camera: CameraPose, image_size, extent_sigmas: float = 3.0) -> Optional[Splat2D]:
    """Project a single GaussianPrimitive; returns None when it is culled."""
    pr = project(np.asarray(gaussian.position)[None], np.asarray(gaussian.rotation)[None],
                 np.asarray(gaussian.scale)[None], camera, image_size, extent_sigmas=extent_sigmas)
    if not pr.visible[0]:
        return None
    return Splat2D(pr.means2d[0], pr.cov2d[0], float(pr.depths[0]),
                   np.concatenate([gaussian.color, gaussian.label]), float(gaussian.opacity))


class _RenderFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, positions, rotations, scales, colors, opacities, labels, camera, image_size, background,
                t_min):
        gset = GaussianSet(positions.detach(), rotations.detach(), scales.detach(), colors.detach(),
                           opacities.detach(), labels.detach())
        frame = RenderFrame(gset, camera, image_size, background, t_min)
        ctx.frame = frame
        ctx.dtype = positions.dtype
        out = frame.output
        to = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=positions.dtype)  # noqa: E731
        return to(out.rgb), to(out.mask), to(out.seg)

    @staticmethod
    def backward(ctx, g_rgb, g_mask, g_seg):
        grads = ctx.frame.backward(g_rgb.numpy(), g_mask.numpy(), g_seg.numpy())
        to = lambda a: torch.as_tensor(a, dtype=ctx.dtype)  # noqa: E731
        return (to(grads["positions"]), to(grads["rotations"]), to(grads["scales"]), to(grads["colors"]),
                to(grads["opacities"]), to(grads["labels"]), None, None, None, None)


def render_torch(gset: GaussianSet, camera: CameraPose, image_size, background_rgb=(0.0, 0.0, 0.0),
                 t_min: float = T_MIN):
    """Differentiable render returning torch tensors ``(rgb, mask, seg)``."""
    return _RenderFunction.apply(gset.positions, gset.rotations, gset.scales, gset.colors, gset.opacities,
                                 gset.labels, camera, tuple(image_size), tuple(np.asarray(background_rgb, float)),
                                 t_min)
