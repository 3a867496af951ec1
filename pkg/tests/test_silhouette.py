"""Differentiable label rasterization of triangle meshes."""
import numpy as np
import pytest
import torch

from gh3d.errors import RenderError
from gh3d.gradcheck import check_silhouette
from gh3d.silhouette import MeshLabelFrame

SIZE = (32, 32)
BIG = np.array([[-10.0, -10.0], [60.0, -10.0], [-10.0, 60.0]])
TRI = np.array([[0, 1, 2]])


def frame(parts, image_size=SIZE, softness=1.5):
    """``parts`` is a list of (screen_xy, depth, faces, label)."""
    return MeshLabelFrame([p[0] for p in parts], [np.full(len(p[0]), p[1]) for p in parts],
                          [p[2] for p in parts], [p[3] for p in parts], image_size, softness)


def cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def hard_raster(xy, faces, size):
    """Independent oracle: pixel-centre inside test with explicit edge functions."""
    width, height = size
    out = np.zeros((height, width), bool)
    for face in faces:
        a, b, c = xy[face]
        for row in range(height):
            for col in range(width):
                p = np.array([col + 0.5, row + 0.5])
                d = [cross2(b - a, p - a), cross2(c - b, p - b), cross2(a - c, p - c)]
                if all(x >= 0 for x in d) or all(x <= 0 for x in d):
                    out[row, col] = True
    return out


def test_covering_triangle_gives_its_label():
    f = frame([(BIG, 10.0, TRI, 2.0)])
    assert f.image[16, 16] == pytest.approx(2.0)


def test_nearer_part_occludes():
    f = frame([(BIG, 10.0, TRI, 2.0), (BIG.copy(), 5.0, TRI, 1.0)])
    assert f.image[16, 16] == pytest.approx(1.0)
    f = frame([(BIG, 5.0, TRI, 2.0), (BIG.copy(), 10.0, TRI, 1.0)])
    assert f.image[16, 16] == pytest.approx(2.0)


def test_far_from_edges_matches_hard_rasterizer_and_values_stay_in_range():
    xy = np.array([[4.0, 5.0], [28.0, 9.0], [12.0, 27.0]])
    f = frame([(xy, 10.0, TRI, 2.0)])
    oracle = hard_raster(xy, TRI, SIZE)
    # distance to the triangle outline for every pixel centre
    centres = np.stack(np.meshgrid(np.arange(32) + 0.5, np.arange(32) + 0.5), -1)
    dist = np.full((32, 32), np.inf)
    for i in range(3):
        a, b = xy[i], xy[(i + 1) % 3]
        t = np.clip(((centres - a) @ (b - a)) / ((b - a) @ (b - a)), 0, 1)
        dist = np.minimum(dist, np.linalg.norm(centres - (a + t[..., None] * (b - a)), axis=-1))
    far = dist > 2.0
    np.testing.assert_array_equal(f.image[far], np.where(oracle, 2.0, 0.0)[far])
    np.testing.assert_array_equal(f.hard, np.where(oracle, 2.0, 0.0))
    assert f.image.min() >= 0.0 and f.image.max() <= 2.0


def test_screen_space_gradient_matches_finite_differences():
    xy = np.array([[4.3, 5.1], [27.6, 9.4], [12.2, 26.7]])
    weights = np.random.default_rng(1).normal(size=(32, 32))
    f = frame([(xy, 10.0, TRI, 2.0)])
    grad = f.backward(weights)[0]
    for vertex in range(3):
        step = np.zeros_like(xy)
        step[vertex, 0] = 1e-4
        fd = ((frame([(xy + step, 10.0, TRI, 2.0)]).image - frame([(xy - step, 10.0, TRI, 2.0)]).image)
              * weights).sum() / 2e-4
        assert grad[vertex, 0] == pytest.approx(fd, rel=1e-2, abs=1e-6)


def test_interior_vertices_receive_no_gradient():
    # 4x4 vertex grid over the centre of the image: the inner 2x2 vertices never touch the outline
    n = 4
    grid = np.stack(np.meshgrid(np.linspace(6, 26, n), np.linspace(6, 26, n)), -1).reshape(-1, 2)
    faces = []
    for r in range(n - 1):
        for c in range(n - 1):
            i = r * n + c
            faces += [[i, i + 1, i + n + 1], [i, i + n + 1, i + n]]
    f = frame([(grid, 10.0, np.array(faces), 1.0)])
    grad = f.backward(np.random.default_rng(2).normal(size=(32, 32)))[0]
    inner = [5, 6, 9, 10]
    np.testing.assert_array_equal(grad[inner], 0.0)
    assert np.abs(grad).sum() > 0


def test_degenerate_mesh_is_rejected():
    collinear = np.array([[1.0, 1.0], [5.0, 5.0], [9.0, 9.0]])
    with pytest.raises(RenderError):
        frame([(collinear, 10.0, TRI, 1.0)])


def test_vertex_gradients_through_camera_match_directional_differences():
    result = check_silhouette(seed=0, size=48)
    assert result.passed, result.line()
