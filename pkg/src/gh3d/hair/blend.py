"""Linear hair shape model from PCA over registered hair meshes."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..errors import ConfigurationError, DataError, ShapeError
from ..scene.io import MAGIC, VERSION, _header
from ..scene.types import TemplateMesh

NUM_COEFFS = 32


@dataclass
class HairBlendModel:
    """M(theta) = mean_shape + sigma * theta @ components, shapes flattened to 3V."""

    mean_shape: np.ndarray  # (3V,)
    sigma: float
    components: np.ndarray  # (K, 3V), orthonormal rows; zero rows beyond ``rank``
    rank: int
    faces: np.ndarray | None = None

    def __post_init__(self):
        self.mean_shape = np.asarray(self.mean_shape, dtype=np.float64).ravel()
        self.components = np.asarray(self.components, dtype=np.float64)
        if self.components.ndim != 2 or self.components.shape[1] != self.mean_shape.shape[0]:
            raise ShapeError("components must be K x 3V matching the mean shape")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")

    @property
    def num_coeffs(self) -> int:
        return self.components.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.mean_shape.shape[0] // 3


def _stack(meshes: Sequence) -> np.ndarray:
    arrays = [np.asarray(m.vertices if isinstance(m, TemplateMesh) else m, dtype=np.float64) for m in meshes]
    shape = arrays[0].shape
    for m, a in zip(meshes, arrays):
        if a.shape != shape:
            raise ShapeError(f"topology mismatch: {a.shape} vs {shape}")
        if isinstance(m, TemplateMesh) and isinstance(meshes[0], TemplateMesh) and not np.array_equal(
                m.faces, meshes[0].faces):
            raise ShapeError("topology mismatch: face lists differ")
    return np.stack([a.reshape(-1) for a in arrays])


def build_blend_model(meshes: Sequence, num_coeffs: int = NUM_COEFFS) -> HairBlendModel:
    """PCA over vertex stacks normalized by one global standard deviation."""
    if len(meshes) < 2:
        raise ConfigurationError("a blend model needs at least two meshes")
    if num_coeffs < 1:
        raise ConfigurationError("num_coeffs must be positive")
    data = _stack(meshes)
    mean = data.mean(0)
    centered = data - mean
    sigma = float(np.sqrt(np.mean(centered * centered)))
    if sigma <= 0:
        raise ConfigurationError("all meshes are identical; sigma would be zero")
    _, sv, vt = np.linalg.svd(centered / sigma, full_matrices=False)
    rank = int(np.sum(sv > sv[0] * max(data.shape) * np.finfo(np.float64).eps))
    keep = min(rank, num_coeffs)
    comps = np.zeros((num_coeffs, data.shape[1]))
    comps[:keep] = vt[:keep]
    faces = meshes[0].faces.copy() if isinstance(meshes[0], TemplateMesh) else None
    return HairBlendModel(mean, sigma, comps, keep, faces)


def blend_hair_shape(model: HairBlendModel, theta):
    """(V, 3) vertices; torch input stays differentiable."""
    if isinstance(theta, torch.Tensor):
        if theta.shape[-1] != model.num_coeffs:
            raise ShapeError(f"theta must have {model.num_coeffs} entries")
        comps = torch.as_tensor(model.components, dtype=theta.dtype)
        mean = torch.as_tensor(model.mean_shape, dtype=theta.dtype)
        return (mean + model.sigma * (theta @ comps)).reshape(*theta.shape[:-1], -1, 3)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != model.num_coeffs:
        raise ShapeError(f"theta must have {model.num_coeffs} entries")
    return (model.mean_shape + model.sigma * (theta @ model.components)).reshape(*theta.shape[:-1], -1, 3)


def project_to_coeffs(model: HairBlendModel, vertices) -> np.ndarray:
    """Least-squares theta for a registered mesh (exact inverse on the model's span)."""
    v = np.asarray(vertices.vertices if isinstance(vertices, TemplateMesh) else vertices, dtype=np.float64)
    if v.size != model.mean_shape.size:
        raise ShapeError("vertex count does not match the blend model")
    return model.components @ (v.reshape(-1) - model.mean_shape) / model.sigma


def save_blend_model(path, model: HairBlendModel) -> None:
    faces = model.faces if model.faces is not None else np.zeros((0, 3), dtype=np.int64)
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", VERSION))
        f.write(struct.pack("<IIIIf", model.num_vertices, faces.shape[0], model.num_coeffs, model.rank, model.sigma))
        f.write(np.ascontiguousarray(model.mean_shape, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(model.components, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(faces, dtype="<u4").tobytes())


def load_blend_model(path) -> HairBlendModel:
    with open(path, "rb") as f:
        _header(f)
        head = f.read(20)
        if len(head) != 20:
            raise DataError("truncated blend model header")
        nv, nf, k, rank, sigma = struct.unpack("<IIIIf", head)
        sizes = (4 * 3 * nv, 4 * k * 3 * nv, 4 * 3 * nf)
        blobs = [f.read(s) for s in sizes]
        if any(len(b) != s for b, s in zip(blobs, sizes)):
            raise DataError("truncated blend model payload")
    mean = np.frombuffer(blobs[0], dtype="<f4").astype(np.float64)
    comps = np.frombuffer(blobs[1], dtype="<f4").astype(np.float64).reshape(k, 3 * nv)
    faces = np.frombuffer(blobs[2], dtype="<u4").astype(np.int64).reshape(nf, 3) if nf else None
    return HairBlendModel(mean, float(sigma), comps, rank, faces)
