"""Differentiable rasterization of labelled triangle meshes into scalar label images.

Every mesh part is hard-rasterized with a z-buffer. Near the part's screen-space
silhouette the binary coverage is replaced by a normalized sigmoid of the
distance to the nearest contour/boundary edge (sign taken from the hard
coverage), so the image becomes a differentiable function of the projected
vertex positions. Parts are composited front to back by depth over a
background of 0. Visibility changes between parts carry no gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import torch
from numba import njit
from scipy import ndimage

from .errors import ConfigurationError, RenderError
from .scene.types import CameraPose, TemplateMesh

DEFAULT_SOFTNESS = 1.5
_SHARPNESS = 3.0  # sigmoid spans [-3, 3] logits across the soft band


@dataclass
class LabeledMeshScene:
    """Mesh parts rendered together; each part carries one scalar label (face 1, hair 2)."""

    meshes: List[TemplateMesh]
    labels: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.labels:
            self.labels = [float(m.labels.max()) if m.num_vertices else 0.0 for m in self.meshes]
        if len(self.labels) != len(self.meshes):
            raise ConfigurationError("one label per mesh part required")


@njit(cache=True)
def _rasterize(xy, depth, faces, width, height, cover, zbuf):
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        if depth[i0] <= 0 or depth[i1] <= 0 or depth[i2] <= 0:
            continue
        ax, ay = xy[i0, 0], xy[i0, 1]
        bx, by = xy[i1, 0], xy[i1, 1]
        cx, cy = xy[i2, 0], xy[i2, 1]
        area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if abs(area) < 1e-12:
            continue
        x0 = max(0, int(math.floor(min(ax, bx, cx) - 0.5)))
        x1 = min(width - 1, int(math.ceil(max(ax, bx, cx) - 0.5)))
        y0 = max(0, int(math.floor(min(ay, by, cy) - 0.5)))
        y1 = min(height - 1, int(math.ceil(max(ay, by, cy) - 0.5)))
        iz0, iz1, iz2 = 1.0 / depth[i0], 1.0 / depth[i1], 1.0 / depth[i2]
        for py in range(y0, y1 + 1):
            qy = py + 0.5
            for px in range(x0, x1 + 1):
                qx = px + 0.5
                w0 = ((bx - qx) * (cy - qy) - (cx - qx) * (by - qy)) / area
                w1 = ((cx - qx) * (ay - qy) - (ax - qx) * (cy - qy)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0 or w1 < 0 or w2 < 0:
                    continue
                z = 1.0 / (w0 * iz0 + w1 * iz1 + w2 * iz2)
                if z < zbuf[py, px]:
                    zbuf[py, px] = z
                    cover[py, px] = True


@njit(cache=True)
def _nearest_edges(xy, edges, band, softness, width, height, best_d, best_e, best_t):
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        ax, ay = xy[a, 0], xy[a, 1]
        bx, by = xy[b, 0], xy[b, 1]
        ex, ey = bx - ax, by - ay
        len2 = ex * ex + ey * ey
        x0 = max(0, int(math.floor(min(ax, bx) - softness - 0.5)))
        x1 = min(width - 1, int(math.ceil(max(ax, bx) + softness - 0.5)))
        y0 = max(0, int(math.floor(min(ay, by) - softness - 0.5)))
        y1 = min(height - 1, int(math.ceil(max(ay, by) + softness - 0.5)))
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                if not band[py, px]:
                    continue
                qx = px + 0.5 - ax
                qy = py + 0.5 - ay
                t = 0.0
                if len2 > 0:
                    t = (qx * ex + qy * ey) / len2
                    t = min(1.0, max(0.0, t))
                dx = qx - t * ex
                dy = qy - t * ey
                d = math.sqrt(dx * dx + dy * dy)
                if d < softness and d < best_d[py, px]:
                    best_d[py, px] = d
                    best_e[py, px] = e
                    best_t[py, px] = t


def _edge_topology(faces: np.ndarray):
    """Unique undirected edges with up to two adjacent faces (-1 where missing)."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    owner = np.tile(np.arange(faces.shape[0]), 3)
    key = np.sort(e, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    adj = np.full((uniq.shape[0], 2), -1, dtype=np.int64)
    order = np.argsort(inv, kind="stable")
    first = np.ones(order.shape[0], dtype=bool)
    first[1:] = inv[order][1:] != inv[order][:-1]
    adj[inv[order][first], 0] = owner[order][first]
    second = ~first
    adj[inv[order][second], 1] = owner[order][second]
    return uniq, adj


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _soft_weight(s, softness):
    lo, hi = _sigmoid(-_SHARPNESS), _sigmoid(_SHARPNESS)
    sig = _sigmoid(s * _SHARPNESS / softness)
    w = (sig - lo) / (hi - lo)
    dw = sig * (1.0 - sig) * _SHARPNESS / softness / (hi - lo)
    return w, dw


class _PartRaster:
    def __init__(self, xy, depth, faces, edges, adj, width, height, softness):
        self.xy = xy
        cover = np.zeros((height, width), dtype=np.bool_)
        zbuf = np.full((height, width), np.inf)
        _rasterize(xy, depth, faces, width, height, cover, zbuf)
        self.cover = cover
        # contour candidates: mesh boundary edges and edges whose faces flip screen orientation
        tri = xy[faces]
        signed = ((tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
                  - (tri[:, 2, 0] - tri[:, 0, 0]) * (tri[:, 1, 1] - tri[:, 0, 1]))
        facing = np.sign(signed)
        f0 = facing[adj[:, 0]]
        f1 = np.where(adj[:, 1] >= 0, facing[np.maximum(adj[:, 1], 0)], 0.0)
        candidate = (adj[:, 1] < 0) | (f0 != f1) | (f0 == 0)
        self.edges = np.ascontiguousarray(edges[candidate])
        transition = np.zeros_like(cover)
        transition[:, 1:] |= cover[:, 1:] != cover[:, :-1]
        transition[:, :-1] |= cover[:, 1:] != cover[:, :-1]
        transition[1:, :] |= cover[1:, :] != cover[:-1, :]
        transition[:-1, :] |= cover[1:, :] != cover[:-1, :]
        reach = int(math.ceil(softness)) + 1
        band = ndimage.binary_dilation(transition, structure=np.ones((3, 3), bool), iterations=reach)
        best_d = np.full((height, width), np.inf)
        best_e = np.full((height, width), -1, dtype=np.int64)
        best_t = np.zeros((height, width))
        _nearest_edges(xy, self.edges, band, softness, width, height, best_d, best_e, best_t)
        soft = best_e >= 0
        sign = np.where(cover, 1.0, -1.0)
        w, dw = _soft_weight(sign * np.where(soft, best_d, 0.0), softness)
        self.coverage = np.where(soft, w, cover.astype(np.float64))
        self.dcov_dd = np.where(soft, dw * sign, 0.0)
        self.soft, self.best_d, self.best_e, self.best_t = soft, best_d, best_e, best_t
        # depth used only for ordering parts
        if len(self.edges):
            e = np.maximum(best_e, 0)
            edge_depth = (1 - best_t) * depth[self.edges[e, 0]] + best_t * depth[self.edges[e, 1]]
        else:
            edge_depth = np.inf
        self.depth = np.where(cover, zbuf, np.where(soft, edge_depth, np.inf))

    def vertex_grad(self, g_cov: np.ndarray, num_vertices: int) -> np.ndarray:
        """Back-propagate dL/dcoverage to screen-space vertex positions."""
        out = np.zeros((num_vertices, 2))
        py, px = np.nonzero(self.soft & (g_cov != 0))
        if py.size == 0:
            return out
        e = self.best_e[py, px]
        t = self.best_t[py, px]
        d = self.best_d[py, px]
        a, b = self.edges[e, 0], self.edges[e, 1]
        q = np.stack([px + 0.5, py + 0.5], axis=1)
        closest = self.xy[a] + t[:, None] * (self.xy[b] - self.xy[a])
        n = (q - closest) / np.maximum(d, 1e-12)[:, None]
        coef = (g_cov[py, px] * self.dcov_dd[py, px])[:, None]
        interior = ((t > 0) & (t < 1))[:, None]
        ga = np.where(interior, -(1 - t)[:, None] * n, np.where((t <= 0)[:, None], -n, 0.0))
        gb = np.where(interior, -t[:, None] * n, np.where((t >= 1)[:, None], -n, 0.0))
        np.add.at(out, a, coef * ga)
        np.add.at(out, b, coef * gb)
        return out


class MeshLabelFrame:
    """Forward state of a label render over screen-space vertices; ``backward`` gives dL/d(screen xy)."""

    def __init__(self, screen_xy: Sequence[np.ndarray], depths: Sequence[np.ndarray],
                 faces: Sequence[np.ndarray], labels: Sequence[float], image_size, softness=DEFAULT_SOFTNESS):
        if softness <= 0:
            raise ConfigurationError("softness must be positive")
        width, height = int(image_size[0]), int(image_size[1])
        self.shape = (height, width)
        self.labels = np.asarray(labels, dtype=np.float64)
        self.parts = []
        self.num_vertices = []
        for xy, z, f in zip(screen_xy, depths, faces):
            f = np.asarray(f, dtype=np.int64)
            xy = np.ascontiguousarray(xy, dtype=np.float64)
            z = np.ascontiguousarray(z, dtype=np.float64)
            tri = xy[f]
            areas = np.abs((tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1])
                           - (tri[:, 2, 0] - tri[:, 0, 0]) * (tri[:, 1, 1] - tri[:, 0, 1]))
            if f.shape[0] == 0 or not np.any(areas > 1e-12):
                raise RenderError("mesh part is entirely degenerate")
            edges, adj = _edge_topology(f)
            self.parts.append(_PartRaster(xy, z, f, edges, adj, width, height, softness))
            self.num_vertices.append(xy.shape[0])
        cov = np.stack([p.coverage for p in self.parts])
        depth = np.stack([p.depth for p in self.parts])
        # stable order by depth; parts absent at a pixel sort last with zero coverage
        self.order = np.argsort(depth, axis=0, kind="stable")
        self.cov_sorted = np.take_along_axis(cov, self.order, axis=0)
        self.lab_sorted = self.labels[self.order]
        trans = np.ones(self.shape)
        img = np.zeros(self.shape)
        self.trans_before = np.empty_like(self.cov_sorted)
        for k in range(len(self.parts)):
            self.trans_before[k] = trans
            img += self.lab_sorted[k] * self.cov_sorted[k] * trans
            trans = trans * (1.0 - self.cov_sorted[k])
        self.image = img
        self.hard = self._hard_image(depth)

    def _hard_image(self, depth):
        cover = np.stack([p.cover for p in self.parts])
        z = np.where(cover, depth, np.inf)
        front = np.argmin(z, axis=0)
        any_cover = cover.any(0)
        return np.where(any_cover, self.labels[front], 0.0)

    def backward(self, grad_image: np.ndarray) -> List[np.ndarray]:
        g = np.asarray(grad_image, dtype=np.float64)
        n = len(self.parts)
        g_sorted = np.zeros_like(self.cov_sorted)
        # out = sum_k l_k c_k T_k with T_k = prod_{j<k} (1 - c_j)
        behind = np.zeros(self.shape)
        for k in range(n - 1, -1, -1):
            g_sorted[k] = g * self.trans_before[k] * (self.lab_sorted[k] - behind)
            behind = self.lab_sorted[k] * self.cov_sorted[k] + (1.0 - self.cov_sorted[k]) * behind
        g_cov = np.zeros_like(g_sorted)
        np.put_along_axis(g_cov, self.order, g_sorted, axis=0)
        return [p.vertex_grad(g_cov[k], nv) for k, (p, nv) in enumerate(zip(self.parts, self.num_vertices))]


class _MeshLabelFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, meta, *screen_xy):
        depths, faces, labels, image_size, softness = meta
        frame = MeshLabelFrame([s.detach().cpu().numpy() for s in screen_xy], depths, faces, labels, image_size,
                               softness)
        ctx.frame = frame
        ctx.dtype = screen_xy[0].dtype
        return torch.as_tensor(frame.image, dtype=ctx.dtype)

    @staticmethod
    def backward(ctx, grad):
        grads = ctx.frame.backward(grad.detach().cpu().numpy())
        return (None,) + tuple(torch.as_tensor(g, dtype=ctx.dtype) for g in grads)


def render_mesh_labels_torch(vertices: Sequence[torch.Tensor], faces: Sequence[np.ndarray], labels: Sequence[float],
                             camera: CameraPose, image_size, softness: float = DEFAULT_SOFTNESS) -> torch.Tensor:
    """Differentiable (w.r.t. vertex tensors) H x W label image."""
    screen, depths = [], []
    for v in vertices:
        xy, z = camera.project_points(v, image_size)
        screen.append(xy)
        depths.append(z.detach().cpu().numpy())
    meta = (depths, [np.asarray(f) for f in faces], list(labels), tuple(image_size), float(softness))
    return _MeshLabelFunction.apply(meta, *screen)


def render_mesh_labels(scene: LabeledMeshScene, camera: CameraPose, image_size,
                       softness: float = DEFAULT_SOFTNESS) -> np.ndarray:
    """H x W label image of ``scene`` (numpy)."""
    return mesh_label_frame(scene, camera, image_size, softness).image


def mesh_label_frame(scene: LabeledMeshScene, camera: CameraPose, image_size,
                     softness: float = DEFAULT_SOFTNESS) -> MeshLabelFrame:
    screen, depths = [], []
    for m in scene.meshes:
        xy, z = camera.project_points(m.vertices, image_size)
        screen.append(xy)
        depths.append(z)
    return MeshLabelFrame(screen, depths, [m.faces for m in scene.meshes], scene.labels, image_size, softness)
