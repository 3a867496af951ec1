"""Domain types: meshes, cameras, texture maps and Gaussian sets.

World units are millimetres. Cameras follow the OpenCV convention (x right,
y down, z forward) with intrinsics expressed in normalized image coordinates,
so a pixel position is ``(fx * x / z + cx) * W``. Pixel ``(i, j)`` has its
centre at ``(i + 0.5, j + 0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from ..errors import ConfigurationError, ShapeError

NUM_CHANNELS = 14
DELTA = slice(0, 3)
QUAT = slice(3, 7)
SCALE = slice(7, 10)
COLOR = slice(10, 13)
OPACITY = 13

BACKGROUND = np.array([1.0, 0.0, 0.0])
FACE = np.array([0.0, 1.0, 0.0])
HAIR = np.array([0.0, 0.0, 1.0])
_LABELS = (BACKGROUND, FACE, HAIR)

HAIR_MESH_LABEL = 2.0
FACE_MESH_LABEL = 1.0


def _is_one_hot_label(label) -> bool:
    label = np.asarray(label, dtype=np.float64)
    return label.shape == (3,) and any(np.array_equal(label, ref) for ref in _LABELS)


@dataclass(frozen=True)
class TemplateMesh:
    """Triangle mesh with per-corner UVs and a per-vertex scalar label."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    uv: np.ndarray  # (F, 3, 2) per-corner texture coordinates
    labels: Optional[np.ndarray] = None  # (V,)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        uv = np.asarray(self.uv, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ShapeError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ShapeError(f"faces must be (F, 3), got {f.shape}")
        if uv.shape != (f.shape[0], 3, 2):
            raise ShapeError(f"uv must be (F, 3, 2), got {uv.shape}")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            raise ConfigurationError("face index out of range")
        if uv.size and (uv.min() < 0.0 or uv.max() > 1.0):
            raise ConfigurationError("uv coordinates must lie in [0, 1]")
        labels = self.labels
        if labels is None:
            labels = np.zeros(v.shape[0])
        labels = np.asarray(labels, dtype=np.float64)
        if labels.shape != (v.shape[0],):
            raise ShapeError("labels must have one entry per vertex")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "labels", labels)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def face_areas(self, vertices=None) -> np.ndarray:
        v = self.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
        tri = v[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def with_vertices(self, vertices) -> "TemplateMesh":
        if isinstance(vertices, torch.Tensor):
            vertices = vertices.detach().cpu().numpy()
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        if vertices.shape[0] != self.num_vertices:
            raise ShapeError("vertex count mismatch")
        return TemplateMesh(vertices, self.faces, self.uv, self.labels)

    def with_label(self, value: float) -> "TemplateMesh":
        return TemplateMesh(self.vertices, self.faces, self.uv, np.full(self.num_vertices, float(value)))

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


@dataclass(frozen=True)
class UvRig:
    """Binding of every texel centre to a face and barycentric coordinates.

    ``face_index`` is -1 where the texel centre lies outside all UV triangles.
    The rig depends only on the UV layout, so it stays valid under deformation.
    """

    resolution: int
    face_index: np.ndarray  # (R, R) int
    barycentric: np.ndarray  # (R, R, 3)
    faces: np.ndarray  # (F, 3) copied from the source mesh
    num_vertices: int

    @property
    def valid(self) -> np.ndarray:
        return self.face_index >= 0

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def valid_flat(self) -> np.ndarray:
        """Row-major flat indices of valid texels."""
        return np.flatnonzero(self.valid.ravel())

    def corner_indices(self) -> np.ndarray:
        """(N, 3) vertex indices of the face bound to each valid texel."""
        return self.faces[self.face_index.ravel()[self.valid_flat]]

    def valid_barycentric(self) -> np.ndarray:
        return self.barycentric.reshape(-1, 3)[self.valid_flat]


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera extrinsic (4x4) and normalized intrinsic (3x3)."""

    extrinsic: np.ndarray
    intrinsic: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.extrinsic, dtype=np.float64).reshape(4, 4)
        k = np.asarray(self.intrinsic, dtype=np.float64).reshape(3, 3)
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(k))):
            raise ConfigurationError("camera contains non-finite values")
        r = e[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-5) or np.linalg.det(r) < 0:
            raise ConfigurationError("extrinsic rotation block is not a proper rotation")
        if k[0, 0] <= 0 or k[1, 1] <= 0 or k[0, 1] != 0:
            raise ConfigurationError("intrinsic must have positive focal lengths and zero skew")
        object.__setattr__(self, "extrinsic", e)
        object.__setattr__(self, "intrinsic", k)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsic[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsic[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.extrinsic.ravel(), self.intrinsic.ravel()])

    @classmethod
    def from_vector(cls, values) -> "CameraPose":
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.shape != (25,):
            raise ShapeError(f"camera vector must have 25 values, got {values.shape}")
        return cls(values[:16].reshape(4, 4), values[16:].reshape(3, 3))

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), focal=2.0) -> "CameraPose":
        """Camera at ``eye`` looking at ``target``; ``up`` is the world up direction."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            raise ConfigurationError("up vector parallel to viewing direction")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        ext = np.eye(4)
        ext[:3, :3] = rot
        ext[:3, 3] = -rot @ eye
        k = np.array([[focal, 0.0, 0.5], [0.0, focal, 0.5], [0.0, 0.0, 1.0]])
        return cls(ext, k)

    @classmethod
    def orbit(cls, yaw_deg: float, pitch_deg: float = 0.0, radius: float = 600.0,
              target=(0.0, 0.0, 0.0), focal=2.0) -> "CameraPose":
        """Orbit camera. Yaw 0 looks at the +z face of the target, yaw grows counter-clockwise seen from above."""
        yaw, pitch = np.deg2rad(yaw_deg), np.deg2rad(pitch_deg)
        offset = radius * np.array([np.cos(pitch) * np.sin(yaw), np.sin(pitch), np.cos(pitch) * np.cos(yaw)])
        return cls.look_at(np.asarray(target, dtype=np.float64) + offset, target, focal=focal)

    def project_points(self, points, image_size):
        """Pixel coordinates (N, 2) and camera depths (N,) of world points; numpy or torch."""
        w, h = image_size
        k = self.intrinsic
        if isinstance(points, torch.Tensor):
            rot = torch.as_tensor(self.rotation, dtype=points.dtype)
            tr = torch.as_tensor(self.translation, dtype=points.dtype)
            cam = points @ rot.T + tr
            z = cam[:, 2]
            u = (k[0, 0] * cam[:, 0] / z + k[0, 2]) * w
            v = (k[1, 1] * cam[:, 1] / z + k[1, 2]) * h
            return torch.stack([u, v], dim=1), z
        points = np.asarray(points, dtype=np.float64)
        cam = points @ self.rotation.T + self.translation
        z = cam[:, 2]
        u = (k[0, 0] * cam[:, 0] / z + k[0, 2]) * w
        v = (k[1, 1] * cam[:, 1] / z + k[1, 2]) * h
        return np.stack([u, v], axis=1), z


@dataclass(frozen=True)
class GaussianTextureMap:
    """H x W x 14 grid of raw Gaussian parameters (numpy array or torch tensor).

    Channel layout: [0:3) delta position, [3:7) raw quaternion (w, x, y, z),
    [7:10) raw log-scale, [10:13) raw colour logits, [13] raw opacity logit.
    """

    data: object

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != NUM_CHANNELS:
            raise ShapeError(f"texture must be (H, W, {NUM_CHANNELS}), got {tuple(d.shape)}")

    @property
    def resolution(self) -> int:
        if self.data.shape[0] != self.data.shape[1]:
            raise ShapeError("texture is not square")
        return int(self.data.shape[0])

    @classmethod
    def zeros(cls, resolution: int, dtype=np.float64) -> "GaussianTextureMap":
        return cls(np.zeros((resolution, resolution, NUM_CHANNELS), dtype=dtype))


@dataclass(frozen=True)
class GaussianPrimitive:
    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    color: np.ndarray
    opacity: float
    label: np.ndarray = field(default_factory=lambda: FACE.copy())

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ConfigurationError("rotation must be a unit quaternion")
        if not 0.0 <= self.opacity <= 1.0:
            raise ConfigurationError("opacity must lie in [0, 1]")
        if np.any(np.asarray(self.color) < 0) or np.any(np.asarray(self.color) > 1):
            raise ConfigurationError("color channels must lie in [0, 1]")
        if np.any(np.asarray(self.scale) <= 0):
            raise ConfigurationError("scale components must be positive")
        if not _is_one_hot_label(self.label):
            raise ConfigurationError("label must be one of the three one-hot classes")


@dataclass
class GaussianSet:
    """Structure-of-arrays Gaussian collection (torch tensors, possibly requiring grad).

    ``anchors`` are the surface points the Gaussians were spawned from and
    ``deltas`` the clamped offsets, kept for the position regularizer.
    """

    positions: torch.Tensor  # (N, 3)
    rotations: torch.Tensor  # (N, 4)
    scales: torch.Tensor  # (N, 3)
    colors: torch.Tensor  # (N, 3)
    opacities: torch.Tensor  # (N,)
    labels: torch.Tensor  # (N, 3)
    anchors: Optional[torch.Tensor] = None
    deltas: Optional[torch.Tensor] = None

    def __post_init__(self):
        for name in ("positions", "rotations", "scales", "colors", "opacities", "labels", "anchors", "deltas"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, torch.Tensor):
                setattr(self, name, torch.as_tensor(np.asarray(value, dtype=np.float64)))
        n = self.positions.shape[0]
        shapes = {"rotations": (n, 4), "scales": (n, 3), "colors": (n, 3), "opacities": (n,), "labels": (n, 3)}
        for name, shape in shapes.items():
            if tuple(getattr(self, name).shape) != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {tuple(getattr(self, name).shape)}")

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def __getitem__(self, i: int) -> GaussianPrimitive:
        def row(t):
            return t[i].detach().cpu().numpy().astype(np.float64)

        q = row(self.rotations)
        return GaussianPrimitive(row(self.positions), q / np.linalg.norm(q), row(self.scales),
                                 row(self.colors), float(row(self.opacities)), row(self.labels))

    @classmethod
    def empty(cls, dtype=torch.float64) -> "GaussianSet":
        z = lambda *s: torch.zeros(s, dtype=dtype)  # noqa: E731
        return cls(z(0, 3), z(0, 4), z(0, 3), z(0, 3), z(0), z(0, 3), z(0, 3), z(0, 3))

    @classmethod
    def from_primitives(cls, prims: Sequence[GaussianPrimitive]) -> "GaussianSet":
        if not prims:
            return cls.empty()
        stack = lambda attr: torch.as_tensor(np.array([np.asarray(getattr(p, attr), dtype=np.float64) for p in prims]))  # noqa: E731
        pos = stack("position")
        return cls(pos, stack("rotation"), stack("scale"), stack("color"), stack("opacity"), stack("label"),
                   pos.clone(), torch.zeros_like(pos))

    @classmethod
    def concat(cls, sets: Sequence["GaussianSet"]) -> "GaussianSet":
        def cat(name):
            parts = [getattr(s, name) for s in sets]
            if any(p is None for p in parts):
                return None
            return torch.cat(parts, dim=0)

        return cls(*(cat(n) for n in ("positions", "rotations", "scales", "colors", "opacities", "labels",
                                      "anchors", "deltas")))

    def detach(self) -> "GaussianSet":
        return GaussianSet(*(None if t is None else t.detach() for t in (
            self.positions, self.rotations, self.scales, self.colors, self.opacities, self.labels,
            self.anchors, self.deltas)))

    def to(self, dtype) -> "GaussianSet":
        return GaussianSet(*(None if t is None else t.to(dtype) for t in (
            self.positions, self.rotations, self.scales, self.colors, self.opacities, self.labels,
            self.anchors, self.deltas)))
