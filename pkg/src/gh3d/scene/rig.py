"""Texel rigging and Gaussian spawning."""
from __future__ import annotations

import numpy as np
import torch

from ..errors import ConfigurationError, NumericError, ShapeError
from .types import COLOR, DELTA, OPACITY, QUAT, SCALE, GaussianSet, GaussianTextureMap, TemplateMesh, UvRig

SCALE_MIN = 1e-4
SCALE_MAX = 1e4
FACE_GAMMA = 40.0
HAIR_GAMMA = 20.0


def build_uv_rig(mesh: TemplateMesh, resolution: int) -> UvRig:
    """Bind each texel centre to the lowest-index UV triangle containing it."""
    if resolution < 1:
        raise ConfigurationError("resolution must be >= 1")
    if mesh.num_faces == 0:
        raise ConfigurationError("mesh has an empty UV layout")
    r = resolution
    face_index = np.full((r, r), -1, dtype=np.int64)
    bary = np.zeros((r, r, 3))
    uv = mesh.uv * r - 0.5  # texel-centre units: centre of texel (row j, col i) sits at (i, j)
    for f in range(mesh.num_faces):
        a, b, c = uv[f]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if abs(det) < 1e-14:
            continue
        lo = np.maximum(np.ceil(np.minimum(np.minimum(a, b), c) - 1e-9), 0).astype(int)
        hi = np.minimum(np.floor(np.maximum(np.maximum(a, b), c) + 1e-9), r - 1).astype(int)
        if np.any(hi < lo):
            continue
        cols = np.arange(lo[0], hi[0] + 1)
        rows = np.arange(lo[1], hi[1] + 1)
        px, py = np.meshgrid(cols.astype(np.float64), rows.astype(np.float64))
        l1 = ((px - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (py - a[1])) / det
        l2 = ((b[0] - a[0]) * (py - a[1]) - (px - a[0]) * (b[1] - a[1])) / det
        l0 = 1.0 - l1 - l2
        tol = -1e-10
        inside = (l0 >= tol) & (l1 >= tol) & (l2 >= tol)
        sub = face_index[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
        take = inside & (sub < 0)
        if not take.any():
            continue
        w = np.clip(np.stack([l0, l1, l2], axis=-1), 0.0, None)
        w /= w.sum(-1, keepdims=True)
        sub[take] = f
        bsub = bary[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
        bsub[take] = w[take]
    return UvRig(r, face_index, bary, mesh.faces.copy(), mesh.num_vertices)


def surface_points(rig: UvRig, vertices):
    """Barycentric surface point of every valid texel, row-major. Linear in ``vertices``."""
    if isinstance(vertices, TemplateMesh):
        vertices = vertices.vertices
    if vertices.shape[0] != rig.num_vertices:
        raise ShapeError(f"rig expects {rig.num_vertices} vertices, got {vertices.shape[0]}")
    corners = rig.corner_indices()
    bary = rig.valid_barycentric()
    if isinstance(vertices, torch.Tensor):
        tri = vertices[torch.as_tensor(corners)]
        return (torch.as_tensor(bary, dtype=vertices.dtype)[..., None] * tri).sum(1)
    tri = np.asarray(vertices, dtype=np.float64)[corners]
    return (bary[..., None] * tri).sum(1)


def normalize_quaternion(q: torch.Tensor) -> torch.Tensor:
    """Unit quaternion; an all-zero input maps to the identity rotation."""
    norm = q.norm(dim=-1, keepdim=True)
    zero = norm == 0
    identity = torch.zeros_like(q)
    identity[..., 0] = 1.0
    return torch.where(zero, identity, q / torch.where(zero, torch.ones_like(norm), norm))


def spawn_gaussians(texture: GaussianTextureMap, rig: UvRig, mesh, gamma: float, label) -> GaussianSet:
    """Decode a raw texture into Gaussians anchored on the (possibly deformed) mesh.

    ``mesh`` may be a TemplateMesh or a (V, 3) vertex array/tensor; gradients
    flow into both the texture and tensor vertices.
    """
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    data = texture.data if isinstance(texture, GaussianTextureMap) else texture
    if not isinstance(data, torch.Tensor):
        data = torch.as_tensor(np.asarray(data, dtype=np.float64))
    if data.shape[0] != rig.resolution or data.shape[1] != rig.resolution:
        raise ShapeError(f"texture resolution {tuple(data.shape[:2])} does not match rig {rig.resolution}")
    if not torch.isfinite(data).all():
        raise NumericError("texture contains non-finite values")
    vertices = mesh.vertices if isinstance(mesh, TemplateMesh) else mesh
    if not isinstance(vertices, torch.Tensor):
        vertices = torch.as_tensor(np.asarray(vertices), dtype=data.dtype)
    anchors = surface_points(rig, vertices.to(data.dtype))

    texels = data.reshape(-1, data.shape[2])[torch.as_tensor(rig.valid_flat)]
    delta = texels[:, DELTA].clamp(-gamma, gamma)
    label = torch.as_tensor(np.asarray(label, dtype=np.float64), dtype=data.dtype)
    n = texels.shape[0]
    return GaussianSet(
        positions=anchors + delta,
        rotations=normalize_quaternion(texels[:, QUAT]),
        scales=texels[:, SCALE].exp().clamp(SCALE_MIN, SCALE_MAX),
        colors=torch.sigmoid(texels[:, COLOR]),
        opacities=torch.sigmoid(texels[:, OPACITY]),
        labels=label.expand(n, 3).clone(),
        anchors=anchors,
        deltas=delta,
    )
