"""Jacobian fields, the Poisson solve, silhouette fitting and the blend-shape model."""
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gh3d.errors import ConfigurationError, NumericError, ShapeError
from gh3d.gradcheck import check_blend, check_poisson
from gh3d.hair import (HairFitConfig, HairstyleParams, JacobianField, blend_hair_shape, build_blend_model,
                       fit_hair_mesh, hairstyle, hairstyle_family, load_blend_model, mesh_gradient_operator,
                       poisson_solve, poisson_solve_torch, project_to_coeffs, save_blend_model, silhouette_iou)
from gh3d.scene import CameraPose, TemplateMesh, hair_cap, quad_mesh
from gh3d.silhouette import LabeledMeshScene, render_mesh_labels


@pytest.fixture(scope="module")
def small_cap():
    return hair_cap(n_lon=12, n_rings=6)


def rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.linalg.det(q))


# ---------------------------------------------------------------- gradient operator

def test_rest_pose_gives_identity(small_cap):
    op = mesh_gradient_operator(small_cap)
    np.testing.assert_allclose(op.deformation_gradients(small_cap.vertices), np.tile(np.eye(3), (op.num_faces, 1, 1)),
                               atol=1e-12)


def test_rotated_pose_gives_the_rotation(small_cap):
    rot = rotation(np.random.default_rng(0))
    op = mesh_gradient_operator(small_cap)
    got = op.deformation_gradients(small_cap.vertices @ rot.T + 5.0)
    np.testing.assert_allclose(got, np.tile(rot, (op.num_faces, 1, 1)), atol=1e-10)


def test_deformation_gradients_match_per_face_solve(small_cap):
    rng = np.random.default_rng(1)
    moved = small_cap.vertices + rng.normal(0, 3.0, small_cap.vertices.shape)
    op = mesh_gradient_operator(small_cap)
    got = op.deformation_gradients(moved)
    for f in range(0, small_cap.num_faces, 7):
        a, b, c = small_cap.faces[f]
        e1, e2 = small_cap.vertices[b] - small_cap.vertices[a], small_cap.vertices[c] - small_cap.vertices[a]
        d1, d2 = moved[b] - moved[a], moved[c] - moved[a]
        n = np.cross(e1, e2)
        dn = np.cross(d1, d2)
        # the deformed normal is scaled so that area ratio is carried along it
        dn = dn / np.sqrt(np.linalg.norm(dn) * np.linalg.norm(n))
        n = n / np.linalg.norm(n)
        source = np.stack([e1, e2, n])
        target = np.stack([d1, d2, dn])
        solved = np.linalg.lstsq(source, target, rcond=None)[0].T
        np.testing.assert_allclose(got[f], solved, atol=1e-9)


def test_zero_area_face_is_rejected():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]])
    mesh = TemplateMesh(v, np.array([[0, 1, 2], [0, 1, 3]]), np.zeros((2, 3, 2)))
    with pytest.raises(ConfigurationError):
        mesh_gradient_operator(mesh)


def test_disconnected_mesh_is_rejected():
    a = quad_mesh()
    v = np.concatenate([a.vertices, a.vertices + 5.0])
    f = np.concatenate([a.faces, a.faces + 4])
    mesh = TemplateMesh(v, f, np.concatenate([a.uv, a.uv]))
    with pytest.raises(ConfigurationError):
        mesh_gradient_operator(mesh)


# ---------------------------------------------------------------- Poisson solve

def test_identity_field_recentres_the_rest_shape(small_cap):
    out = poisson_solve(JacobianField.identity(small_cap.num_faces), small_cap)
    np.testing.assert_allclose(out, small_cap.vertices - small_cap.vertices.mean(0), atol=1e-6)


def test_uniform_scale_field_scales_about_the_centroid(small_cap):
    field = JacobianField(np.tile(1.7 * np.eye(3), (small_cap.num_faces, 1, 1)), np.array([1.0, -2.0, 3.0]))
    centred = small_cap.vertices - small_cap.vertices.mean(0)
    np.testing.assert_allclose(poisson_solve(field, small_cap), 1.7 * centred + [1.0, -2.0, 3.0], atol=1e-6)


def test_solution_is_a_local_minimum(small_cap):
    rng = np.random.default_rng(2)
    op = mesh_gradient_operator(small_cap)
    jac = np.eye(3) + 0.2 * rng.normal(size=(op.num_faces, 3, 3))
    best = op.solve(jac)
    base = op.energy(best, jac)
    for _ in range(1000):
        assert op.energy(best + rng.normal(0, 1e-3, best.shape), jac) >= base


def test_round_trip_recovers_deformed_vertices(small_cap):
    rng = np.random.default_rng(3)
    op = mesh_gradient_operator(small_cap)
    moved = hairstyle(small_cap, HairstyleParams.sample(rng)).vertices
    got = op.solve(op.deformation_gradients(moved))
    np.testing.assert_allclose(got, moved - moved.mean(0), atol=1e-6)


def test_solve_is_linear_and_matches_directional_differences(small_cap):
    op = mesh_gradient_operator(small_cap)
    rng = np.random.default_rng(4)
    j0 = np.eye(3) + 0.1 * rng.normal(size=(op.num_faces, 3, 3))
    dj = rng.normal(size=j0.shape)
    w = rng.normal(size=(small_cap.num_vertices, 3))
    jt = torch.tensor(j0, requires_grad=True)
    (poisson_solve_torch(jt, torch.zeros(3, dtype=torch.float64), op) * torch.as_tensor(w)).sum().backward()
    analytic = float((jt.grad.numpy() * dj).sum())
    fd = float(((op.solve(j0 + 1e-3 * dj) - op.solve(j0 - 1e-3 * dj)) * w).sum()) / 2e-3
    assert abs(analytic - fd) <= 1e-6 * abs(fd)
    assert check_poisson().passed


def test_solve_rejects_wrong_face_count(small_cap):
    op = mesh_gradient_operator(small_cap)
    with pytest.raises(ShapeError):
        op.solve(np.tile(np.eye(3), (op.num_faces + 1, 1, 1)))


def test_jacobian_field_rejects_nonfinite():
    with pytest.raises(ConfigurationError):
        JacobianField(np.full((2, 3, 3), np.nan), np.zeros(3))


# ---------------------------------------------------------------- fitting

def label_views(mesh, cams, size=48):
    return [(c, render_mesh_labels(LabeledMeshScene([mesh]), c, (size, size))) for c in cams]


CAMS = [CameraPose.orbit(y, 10.0) for y in (0.0, 90.0, 180.0, 270.0)]


def test_fit_to_own_render_is_a_fixed_point():
    template = hair_cap()
    result = fit_hair_mesh(template, label_views(template, CAMS[:2]), HairFitConfig(iterations=5))
    assert result.trace[0] <= 1e-10
    np.testing.assert_allclose(result.mesh.vertices, template.vertices, atol=1e-6)


def test_fit_rejects_empty_targets():
    with pytest.raises(ConfigurationError):
        fit_hair_mesh(hair_cap(), [])


def test_fit_reports_iteration_of_nonfinite_loss():
    bad = np.zeros((32, 32))
    bad[4, 4] = np.nan
    with pytest.raises(NumericError) as info:
        fit_hair_mesh(hair_cap(), [(CAMS[0], bad)], HairFitConfig(iterations=3))
    assert info.value.iteration == 0


def test_all_background_target_shrinks_the_hair():
    result = fit_hair_mesh(hair_cap(), [(CAMS[0], np.zeros((48, 48)))], HairFitConfig(iterations=120))
    fg = np.array(result.foreground)
    # strictly monotone while the cap collapses; afterwards a few residual pixels may flicker
    assert np.all(np.diff(fg[:61]) <= 0)
    assert fg[-1] <= 0.05 * fg[0]


def test_fit_recovers_a_known_deformation_at_low_resolution():
    template = hair_cap()
    target = hairstyle(template, HairstyleParams.sample(np.random.default_rng(5)))
    targets = label_views(target, CAMS, 64)
    result = fit_hair_mesh(template, targets, HairFitConfig(iterations=150))
    assert np.all(np.isfinite(result.trace))
    assert min(result.trace) <= result.trace[0]
    fitted = label_views(result.mesh, CAMS, 64)
    ious = [silhouette_iou(f, t, 1.0) for (_, f), (_, t) in zip(fitted, targets)]
    assert min(ious) >= 0.95


def test_silhouette_iou_oracle():
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    a[:2] = 2.0
    b[1:3] = 2.0
    assert silhouette_iou(a, b, 1.0) == pytest.approx(1 / 3)
    assert silhouette_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


# ---------------------------------------------------------------- blend model

@pytest.fixture(scope="module")
def family():
    meshes, _ = hairstyle_family(hair_cap(n_lon=12, n_rings=6), 10, seed=0)
    return meshes


def test_two_mesh_model(family):
    a, b = family[0], family[1]
    model = build_blend_model([a, b], 32)
    assert model.rank == 1
    np.testing.assert_allclose(model.mean_shape, 0.5 * (a.vertices + b.vertices).ravel(), atol=1e-12)
    diff = (b.vertices - a.vertices).ravel()
    assert abs(model.components[0] @ diff) == pytest.approx(np.linalg.norm(diff), rel=1e-10)
    np.testing.assert_array_equal(model.components[1:], 0.0)


def test_full_rank_reconstruction(family):
    model = build_blend_model(family, 9)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(9), atol=1e-6)
    assert model.rank == 9
    for mesh in family:
        rec = blend_hair_shape(model, project_to_coeffs(model, mesh))
        rms = np.sqrt(np.mean(np.sum((rec - mesh.vertices) ** 2, axis=1)))
        assert rms <= 1e-5 * mesh.bbox_diagonal()


def test_duplicates_do_not_change_the_model(family):
    base = build_blend_model(family[:5], 4)
    dup = build_blend_model(family[:5] * 2, 4)
    assert dup.sigma == pytest.approx(base.sigma, rel=1e-12)
    np.testing.assert_allclose(dup.mean_shape, base.mean_shape, atol=1e-12)
    # components are defined up to sign
    np.testing.assert_allclose(np.abs(np.sum(dup.components * base.components, axis=1)), 1.0, atol=1e-8)


def test_sigma_is_global_standard_deviation(family):
    model = build_blend_model(family, 32)
    stack = np.stack([m.vertices.ravel() for m in family])
    assert model.sigma == pytest.approx(np.std(stack - stack.mean(0)), rel=1e-12)
    assert model.rank == 9
    np.testing.assert_array_equal(model.components[9:], 0.0)


def test_basis_cases(family):
    model = build_blend_model(family, 32)
    np.testing.assert_array_equal(blend_hair_shape(model, np.zeros(32)).ravel(), model.mean_shape)
    e1 = np.zeros(32)
    e1[0] = 1.0
    np.testing.assert_allclose(blend_hair_shape(model, e1).ravel(), model.mean_shape + model.sigma * model.components[0],
                               atol=1e-12)


def test_projection_error_equals_truncation_error(family):
    model = build_blend_model(family, 4)
    for mesh in family[:3]:
        x = mesh.vertices.ravel() - model.mean_shape
        rec = blend_hair_shape(model, project_to_coeffs(model, mesh)).ravel()
        # residual of the orthogonal projection onto the 4 kept components
        residual = x - model.components.T @ (model.components @ x)
        np.testing.assert_allclose(np.linalg.norm(rec - mesh.vertices.ravel()), np.linalg.norm(residual), rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-2.0, 3.0))
def test_blend_is_affine(seed, alpha):
    meshes, _ = hairstyle_family(hair_cap(n_lon=8, n_rings=4), 5, seed=1)
    model = build_blend_model(meshes, 6)
    rng = np.random.default_rng(seed)
    t1, t2 = rng.normal(size=6), rng.normal(size=6)
    lhs = blend_hair_shape(model, alpha * t1 + (1 - alpha) * t2)
    rhs = alpha * blend_hair_shape(model, t1) + (1 - alpha) * blend_hair_shape(model, t2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(lhs).max()))


def test_blend_gradient_and_shape_errors(family):
    model = build_blend_model(family, 8)
    assert check_blend().passed
    theta = torch.zeros(8, dtype=torch.float64, requires_grad=True)
    out = blend_hair_shape(model, theta)
    out.reshape(-1)[5].backward()
    np.testing.assert_allclose(theta.grad.numpy(), model.sigma * model.components[:, 5], atol=1e-12)
    with pytest.raises(ShapeError):
        blend_hair_shape(model, np.zeros(7))
    with pytest.raises(ShapeError):
        build_blend_model([family[0], hair_cap(n_lon=8, n_rings=4)], 4)
    with pytest.raises(ConfigurationError):
        build_blend_model([family[0]], 4)


def test_blend_model_round_trip(tmp_path, family):
    model = build_blend_model(family, 9)
    save_blend_model(tmp_path / "m.3dgh", model)
    back = load_blend_model(tmp_path / "m.3dgh")
    assert (back.num_coeffs, back.rank) == (9, 9)
    np.testing.assert_array_equal(back.faces, model.faces)
    np.testing.assert_allclose(back.mean_shape, model.mean_shape, rtol=1e-6)
    np.testing.assert_allclose(back.components, model.components, atol=1e-6)
    assert back.sigma == pytest.approx(model.sigma, rel=1e-6)
