"""Per-face deformation gradients and the differentiable Poisson solve."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import torch
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from ..errors import ConfigurationError, ShapeError
from ..scene.types import TemplateMesh


@dataclass
class JacobianField:
    jacobians: np.ndarray  # (F, 3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if not (np.all(np.isfinite(np.asarray(self.jacobians))) and np.all(np.isfinite(np.asarray(self.translation)))):
            raise ConfigurationError("Jacobian field contains non-finite entries")

    @classmethod
    def identity(cls, num_faces: int, translation=(0.0, 0.0, 0.0)) -> "JacobianField":
        return cls(np.tile(np.eye(3), (num_faces, 1, 1)), np.asarray(translation, dtype=np.float64))


class GradientOperator:
    """Gradient operator of a rest mesh plus a factored Poisson system.

    ``matrix`` is the (3F x V) linear map taking a per-vertex scalar field to its
    per-face gradient (row ``3f + k`` is the k-th component on face f). The
    gradient lies in the rest face's plane; ``deformation_gradients`` completes
    it with the deformed, scaled normal so that the rest pose maps to identity.
    The Poisson system is factored once and shared; instances are immutable.
    """

    def __init__(self, rest: TemplateMesh):
        v = rest.vertices
        f = rest.faces
        tri = v[f]
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        cross = np.cross(e1, e2)
        dbl_area = np.linalg.norm(cross, axis=1)
        if np.any(dbl_area <= 1e-12 * max(1.0, rest.bbox_diagonal() ** 2)):
            raise ConfigurationError("rest mesh has zero-area faces")
        self.rest = rest
        self.num_vertices = rest.num_vertices
        self.num_faces = rest.num_faces
        self.areas = 0.5 * dbl_area
        self.normals = cross / dbl_area[:, None]
        frame = np.stack([e1, e2, self.normals], axis=2)  # columns
        self.frame_inv = np.linalg.inv(frame)
        self._rest_cross_norm = dbl_area

        nf = self.num_faces
        rows = np.repeat(3 * np.arange(nf)[:, None] + np.arange(3)[None, :], 3, axis=1).reshape(nf, 3, 3)
        ri = self.frame_inv
        coef = np.stack([-(ri[:, 0, :] + ri[:, 1, :]), ri[:, 0, :], ri[:, 1, :]], axis=1)  # (F, corner, k)
        cols = np.broadcast_to(f[:, :, None], (nf, 3, 3))
        self.matrix = sp.csr_matrix((coef.transpose(0, 2, 1).ravel(),
                                     (rows.ravel(), cols.transpose(0, 2, 1).ravel())),
                                    shape=(3 * nf, self.num_vertices))
        self.weights = np.repeat(self.areas, 3)

        adjacency = sp.coo_matrix((np.ones(3 * nf), (np.repeat(f[:, 0], 3), f.ravel())),
                                  shape=(self.num_vertices, self.num_vertices))
        n_comp, _ = connected_components(adjacency + adjacency.T, directed=False)
        if n_comp != 1:
            raise ConfigurationError(f"mesh has {n_comp} connected components; the Poisson system is singular")
        laplacian = (self.matrix.T @ sp.diags(self.weights) @ self.matrix).tocsc()
        self.laplacian = laplacian
        # pin vertex 0; the translation is restored by recentering afterwards
        self._lu = splu(laplacian[1:, 1:].tocsc())

    def apply(self, vertices) -> np.ndarray:
        """Linear (tangential) gradient: (F, 3, 3) with [f, i, k] = d(coord i)/d(rest axis k)."""
        g = self.matrix @ np.asarray(vertices, dtype=np.float64).reshape(self.num_vertices, 3)
        return g.reshape(self.num_faces, 3, 3).transpose(0, 2, 1)

    def deformation_gradients(self, vertices) -> np.ndarray:
        """Full per-face maps taking rest (e1, e2, unit normal) to deformed (e1', e2', scaled normal)."""
        v = np.asarray(vertices, dtype=np.float64).reshape(self.num_vertices, 3)
        tri = v[self.rest.faces]
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        cross = np.cross(e1, e2)
        norm = np.linalg.norm(cross, axis=1)
        scaled_normal = cross / np.sqrt(np.maximum(norm * self._rest_cross_norm, 1e-300))[:, None]
        deformed = np.stack([e1, e2, scaled_normal], axis=2)
        return deformed @ self.frame_inv

    def energy(self, vertices, jacobians) -> float:
        """Area-weighted tangential mismatch sum_f A_f ||grad_f(V) - J_f P_f||^2 minimised by ``solve``."""
        j = np.asarray(jacobians, dtype=np.float64)
        proj = np.eye(3) - self.normals[:, :, None] * self.normals[:, None, :]
        diff = self.apply(vertices) - j @ proj
        return float(np.sum(self.areas * np.sum(diff * diff, axis=(1, 2))))

    def _rhs(self, jacobians: np.ndarray) -> np.ndarray:
        target = jacobians.transpose(0, 2, 1).reshape(3 * self.num_faces, 3)
        return self.matrix.T @ (self.weights[:, None] * target)

    def _solve_pinned(self, rhs: np.ndarray) -> np.ndarray:
        x = np.zeros_like(rhs)
        x[1:] = self._lu.solve(np.ascontiguousarray(rhs[1:]))
        return x

    def solve(self, jacobians, translation=(0.0, 0.0, 0.0)) -> np.ndarray:
        j = np.asarray(jacobians, dtype=np.float64)
        if j.shape != (self.num_faces, 3, 3):
            raise ShapeError(f"expected ({self.num_faces}, 3, 3) Jacobians, got {j.shape}")
        x = self._solve_pinned(self._rhs(j))
        return x - x.mean(0) + np.asarray(translation, dtype=np.float64)

    def solve_adjoint(self, grad_vertices: np.ndarray):
        """Gradients (dL/dJ, dL/dt) of the solve given dL/dV."""
        g = np.asarray(grad_vertices, dtype=np.float64)
        y = self._solve_pinned(g - g.mean(0))
        g_target = self.weights[:, None] * (self.matrix @ y)
        g_j = g_target.reshape(self.num_faces, 3, 3).transpose(0, 2, 1)
        return g_j, g.sum(0)


def mesh_gradient_operator(rest: TemplateMesh) -> GradientOperator:
    return GradientOperator(rest)


_OPERATORS: "dict[int, tuple[TemplateMesh, GradientOperator]]" = {}


def operator_for(rest: TemplateMesh) -> GradientOperator:
    """Operator for ``rest``, factored once and cached for the lifetime of the mesh object."""
    hit = _OPERATORS.get(id(rest))
    if hit is not None and hit[0] is rest:
        return hit[1]
    op = GradientOperator(rest)
    if len(_OPERATORS) > 32:
        _OPERATORS.clear()
    _OPERATORS[id(rest)] = (rest, op)
    return op


def poisson_solve(field: JacobianField, rest) -> np.ndarray:
    """Vertices minimising the area-weighted Jacobian mismatch, centroid moved to ``field.translation``.

    ``rest`` is either the rest mesh or a prebuilt ``GradientOperator``.
    """
    op = rest if isinstance(rest, GradientOperator) else operator_for(rest)
    return op.solve(field.jacobians, field.translation)


class _PoissonFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, jacobians, translation, op):
        ctx.op = op
        out = op.solve(jacobians.detach().cpu().numpy(), translation.detach().cpu().numpy())
        return torch.as_tensor(out, dtype=jacobians.dtype)

    @staticmethod
    def backward(ctx, grad):
        g_j, g_t = ctx.op.solve_adjoint(grad.detach().cpu().numpy())
        return torch.as_tensor(g_j, dtype=grad.dtype), torch.as_tensor(g_t, dtype=grad.dtype), None


def poisson_solve_torch(jacobians: torch.Tensor, translation: torch.Tensor, op: GradientOperator) -> torch.Tensor:
    return _PoissonFunction.apply(jacobians, translation, op)
