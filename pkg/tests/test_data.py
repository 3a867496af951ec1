"""Synthetic dataset generation, storage and texture reconstruction."""
import numpy as np
import pytest
import torch

from gh3d.data import (DatasetSpec, load_dataset, make_synthetic_dataset, render_ground_truth, save_dataset,
                       seg_classes)
from gh3d.errors import ConfigurationError, DataError
from gh3d.losses import LossWeights
from gh3d.reconstruct import GaussianFitConfig, _spawn, fit_gaussians, mask_iou, psnr, random_texture

SMALL = DatasetSpec(num_views=4, image_size=32, texture_resolution=16)


@pytest.fixture(scope="module")
def scene():
    return make_synthetic_dataset(SMALL, 0)[0]


def max_offset(scene, face_tex, hair_tex):
    return float(_spawn(scene, torch.as_tensor(face_tex), torch.as_tensor(hair_tex)).deltas.norm(dim=-1).max())


# ---------------------------------------------------------------- generation

def test_same_seed_gives_identical_dataset():
    spec = DatasetSpec(num_scenes=2, num_views=2, image_size=16, texture_resolution=8)
    a, b = make_synthetic_dataset(spec, 3), make_synthetic_dataset(spec, 3)
    for x, y in zip(a, b):
        for key in ("rgb", "mask", "seg", "seg_class", "mesh_seg", "face_texture", "hair_texture", "latent"):
            np.testing.assert_array_equal(getattr(x, key), getattr(y, key))
        np.testing.assert_array_equal(x.hair_mesh.vertices, y.hair_mesh.vertices)
    other = make_synthetic_dataset(spec, 4)
    assert not np.array_equal(a[0].rgb, other[0].rgb)


def test_mask_agrees_with_segmentation(scene):
    np.testing.assert_array_equal(scene.mask > 0.5, scene.seg_class != 0)
    np.testing.assert_array_equal(seg_classes(scene.mask, scene.seg), scene.seg_class)
    # every scene shows both parts
    assert (scene.seg_class == 1).any() and (scene.seg_class == 2).any()


def test_eight_view_ring_yaws():
    spec = DatasetSpec()
    np.testing.assert_array_equal(spec.yaws(), [0, 45, 90, 135, 180, 225, 270, 315])
    yaws = np.array([((y + 180) % 360) - 180 for y in spec.yaws()])
    assert (np.abs(yaws) < 90).any() and (np.abs(yaws) >= 90).any()
    assert len(spec.cameras()) == 8


def test_hair_shapes_vary_across_scenes():
    spec = DatasetSpec(num_scenes=3, num_views=1, image_size=8, texture_resolution=4)
    meshes = [s.hair_mesh.vertices for s in make_synthetic_dataset(spec, 0)]
    assert np.abs(meshes[0] - meshes[1]).max() > 1.0 and np.abs(meshes[1] - meshes[2]).max() > 1.0


@pytest.mark.parametrize("kwargs", [{"num_scenes": 0}, {"num_views": 0}, {"image_size": 2},
                                    {"texture_resolution": 1}, {"radius": 100.0}])
def test_invalid_spec_is_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        DatasetSpec(**kwargs)


# ---------------------------------------------------------------- storage

def test_rerendering_stored_scene_reproduces_images(tmp_path):
    original = make_synthetic_dataset(DatasetSpec(num_scenes=2, num_views=3, image_size=24,
                                                  texture_resolution=8), 5)
    rerender = render_ground_truth(original[0].face_mesh, original[0].hair_mesh, original[0].face_texture,
                                   original[0].hair_texture, original[0].cameras, 24, original[0].background)
    for got, key in zip(rerender, ("rgb", "mask", "seg", "seg_class", "mesh_seg")):
        np.testing.assert_array_equal(got, getattr(original[0], key))

    save_dataset(tmp_path, original)
    loaded = load_dataset(tmp_path)
    assert len(loaded) == 2
    s = loaded[1]
    # images are stored in single precision; inputs round-trip exactly
    for key in ("face_texture", "hair_texture", "latent", "yaws", "seg_class"):
        np.testing.assert_array_equal(getattr(s, key), getattr(original[1], key))
    for a, b in zip(s.cameras, original[1].cameras):
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())
    np.testing.assert_array_equal(s.hair_mesh.vertices, original[1].hair_mesh.vertices)
    rerender = render_ground_truth(s.face_mesh, s.hair_mesh, s.face_texture, s.hair_texture, s.cameras, 24,
                                   s.background)
    for got, key in zip(rerender, ("rgb", "mask", "seg", "seg_class", "mesh_seg")):
        np.testing.assert_array_equal(np.asarray(got, np.float32), np.asarray(getattr(s, key), np.float32))


def test_loading_missing_data_fails(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    (tmp_path / "scene_000").mkdir()
    with pytest.raises(DataError):
        load_dataset(tmp_path)


# ---------------------------------------------------------------- metrics

def test_metric_oracles():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == float("inf")
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    m1 = np.zeros((4, 4))
    m1[:2] = 1
    m2 = np.zeros((4, 4))
    m2[1:3] = 1
    assert mask_iou(m1, m2) == pytest.approx(4 / 12)
    assert mask_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


# ---------------------------------------------------------------- reconstruction

def test_ground_truth_init_reconstructs(scene):
    result = fit_gaussians(scene, GaussianFitConfig(iterations=0, init="ground_truth"))
    metrics = result.mean("initial")
    assert metrics.psnr >= 40.0
    assert metrics.seg_accuracy == 1.0 and metrics.mask_iou == 1.0
    assert result.trace == []


def test_random_init_loss_decreases_and_callback_sees_every_step(scene):
    seen = []
    result = fit_gaussians(scene, GaussianFitConfig(iterations=30, seed=1), callback=lambda i, v: seen.append(i))
    assert seen == list(range(30))
    totals = np.array([t["total"] for t in result.trace])
    assert np.isfinite(totals).all()
    assert totals[-1] < 0.5 * totals[0]
    best = np.minimum.accumulate(totals)
    assert np.all(np.diff(best) <= 0)
    assert result.mean("final").psnr > result.mean("initial").psnr


def test_dominant_position_weight_collapses_offsets(scene):
    init = max_offset(scene, *[random_texture(np.random.default_rng(1), 16, np.log(3.0)) for _ in range(2)])
    free = fit_gaussians(scene, GaussianFitConfig(iterations=100, seed=1, weights=LossWeights(pos=0.0)))
    pinned = fit_gaussians(scene, GaussianFitConfig(iterations=100, seed=1, weights=LossWeights(pos=1e6)))
    free_max = max_offset(scene, free.face_texture, free.hair_texture)
    pinned_max = max_offset(scene, pinned.face_texture, pinned.hair_texture)
    assert pinned_max <= 0.02 * init
    assert pinned_max < 0.25 * free_max


def test_fit_configuration_errors(scene):
    with pytest.raises(ConfigurationError):
        GaussianFitConfig(iterations=-1)
    with pytest.raises(ConfigurationError):
        GaussianFitConfig(init="zeros")
    with pytest.raises(ConfigurationError):
        GaussianFitConfig(lr={"delta": 0.1})
    one_view = make_synthetic_dataset(DatasetSpec(num_views=1, image_size=16, texture_resolution=8), 0)[0]
    with pytest.raises(ConfigurationError):
        fit_gaussians(one_view, GaussianFitConfig(iterations=1))
