"""Procedural template meshes (unit: mm, y up, face looking towards +z)."""
from __future__ import annotations

import numpy as np

from .types import FACE_MESH_LABEL, HAIR_MESH_LABEL, TemplateMesh


def _orient_outward(vertices, faces, center):
    tri = vertices[faces]
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", normal, tri.mean(1) - center) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces, flip


def _lat_long(polar_of, n_lon, n_rings, radius, close_bottom):
    """Grid on a sphere: ring ``i`` at polar angle ``polar_of(i, phi)``; single vertex at the top pole."""
    phis = np.pi + 2.0 * np.pi * np.arange(n_lon) / n_lon
    verts = [np.array([0.0, radius, 0.0])]
    for i in range(1, n_rings + 1):
        for phi in phis:
            th = polar_of(i, phi)
            verts.append(radius * np.array([np.sin(th) * np.sin(phi), np.cos(th), np.sin(th) * np.cos(phi)]))
    if close_bottom:
        verts.append(np.array([0.0, -radius, 0.0]))
    verts = np.array(verts)

    def vid(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    v_of = (lambda i: i / (n_rings + 1)) if close_bottom else (lambda i: i / n_rings)
    faces, uvs = [], []
    for j in range(n_lon):
        u0, u1 = j / n_lon, (j + 1) / n_lon
        faces.append([0, vid(1, j), vid(1, j + 1)])
        uvs.append([[0.5 * (u0 + u1), 0.0], [u0, v_of(1)], [u1, v_of(1)]])
    for i in range(1, n_rings):
        for j in range(n_lon):
            u0, u1 = j / n_lon, (j + 1) / n_lon
            a, b, c, d = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
            faces.append([a, c, d])
            uvs.append([[u0, v_of(i)], [u0, v_of(i + 1)], [u1, v_of(i + 1)]])
            faces.append([a, d, b])
            uvs.append([[u0, v_of(i)], [u1, v_of(i + 1)], [u1, v_of(i)]])
    if close_bottom:
        s = len(verts) - 1
        for j in range(n_lon):
            u0, u1 = j / n_lon, (j + 1) / n_lon
            faces.append([vid(n_rings, j), s, vid(n_rings, j + 1)])
            uvs.append([[u0, v_of(n_rings)], [0.5 * (u0 + u1), 1.0], [u1, v_of(n_rings)]])
    faces = np.array(faces, dtype=np.int64)
    uvs = np.clip(np.array(uvs), 0.0, 1.0)
    faces2, flip = _orient_outward(verts, faces, np.zeros(3))
    uvs[flip] = uvs[flip][:, [0, 2, 1]]
    return verts, faces2, uvs


def uv_sphere(radius=90.0, n_lon=32, n_lat=16, label=FACE_MESH_LABEL) -> TemplateMesh:
    """Closed UV sphere with poles on the y axis and the UV seam at the back (-z)."""
    v, f, uv = _lat_long(lambda i, phi: np.pi * i / n_lat, n_lon, n_lat - 1, radius, close_bottom=True)
    return TemplateMesh(v, f, uv, np.full(len(v), float(label)))


def hair_cap(radius=100.0, n_lon=36, n_rings=14, front_polar_deg=62.0, back_polar_deg=118.0,
             label=HAIR_MESH_LABEL) -> TemplateMesh:
    """Open spherical cap covering the top and back of the head.

    The rim sits at ``front_polar_deg`` above the forehead and drops to
    ``back_polar_deg`` at the back of the head. ``1 + n_lon * n_rings`` vertices.
    """
    front, back = np.deg2rad(front_polar_deg), np.deg2rad(back_polar_deg)

    def polar(i, phi):
        # phi = 0 is the front (+z)
        rim = front + (back - front) * 0.5 * (1.0 - np.cos(phi))
        return rim * i / n_rings

    v, f, uv = _lat_long(polar, n_lon, n_rings, radius, close_bottom=False)
    return TemplateMesh(v, f, uv, np.full(len(v), float(label)))


def face_head(radius=90.0, n_lon=32, n_lat=16, seed_shape=(1.0, 1.12, 1.0), nose=14.0) -> TemplateMesh:
    """Deformed sphere standing in for a face/head: stretched vertically with a nose bump."""
    base = uv_sphere(radius, n_lon, n_lat)
    v = base.vertices * np.asarray(seed_shape)
    d = v / np.linalg.norm(v, axis=1, keepdims=True)
    bump = nose * np.exp(-((d[:, 0] / 0.25) ** 2 + ((d[:, 1] + 0.1) / 0.3) ** 2)) * (d[:, 2] > 0)
    v = v + d * bump[:, None]
    return base.with_vertices(v)


def quad_mesh(size=1.0, label=1.0) -> TemplateMesh:
    """Two-triangle square in the z=0 plane whose UV layout covers the unit square."""
    v = np.array([[0, 0, 0], [size, 0, 0], [size, size, 0], [0, size, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 2, 3]])
    uv = np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]], dtype=np.float64)
    return TemplateMesh(v, f, uv, np.full(4, float(label)))
