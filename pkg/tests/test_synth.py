import numpy as np
import pytest

from reefmap.errors import BadParameters
from reefmap.grids import UNLABELED
from reefmap.pipeline import coarse_labels_from_points, default_grid
from reefmap.synth import boundary_band, masked_accuracy, synth_scene


def small_scene(seed=0, noise=0.0):
    return synth_scene(seed=seed, extent=15.0, transect_spacing=0.5,
                       point_step=0.3, noise=noise)


def test_same_seed_bitwise_identical():
    a = small_scene(seed=5)
    b = small_scene(seed=5)
    np.testing.assert_array_equal(a.ground_truth.labels, b.ground_truth.labels)
    assert a.ground_truth.grid == b.ground_truth.grid
    pa = a.points.sessions["synth00"]
    pb = b.points.sessions["synth00"]
    assert pa == pb


def test_different_seeds_differ():
    a = small_scene(seed=1)
    b = small_scene(seed=2)
    assert (a.ground_truth.labels != b.ground_truth.labels).any()


def test_noiseless_points_argmax_matches_truth_class():
    scene = small_scene(seed=3)
    for p in scene.points.sessions["synth00"]:
        probs = np.asarray(p.probs)
        assert probs.max() == 1.0
        # the winning class is the Voronoi cell's class at that location
        d = np.hypot(scene.sites[:, 0] - p.x, scene.sites[:, 1] - p.y)
        assert int(np.argmax(probs)) == int(scene.site_classes[int(np.argmin(d))])


def test_every_class_appears():
    scene = small_scene(seed=4)
    assert set(np.unique(scene.site_classes)) == set(range(5))


def test_sites_respect_min_separation():
    scene = small_scene(seed=6)
    pts = scene.sites
    min_sep = 10 * 0.3
    for i in range(len(pts)):
        d = np.hypot(pts[i + 1:, 0] - pts[i, 0], pts[i + 1:, 1] - pts[i, 1])
        assert (d >= min_sep - 1e-9).all()


def test_noise_flip_fraction_small_sigma():
    scene = synth_scene(seed=9, extent=30.0, transect_spacing=0.3,
                        point_step=0.3, noise=0.05)
    pts = scene.points.sessions["synth00"]
    assert len(pts) > 10_000
    flips = 0
    for p in pts:
        probs = np.asarray(p.probs)
        d = np.hypot(scene.sites[:, 0] - p.x, scene.sites[:, 1] - p.y)
        true_class = int(scene.site_classes[int(np.argmin(d))])
        if int(np.argmax(probs)) != true_class:
            flips += 1
    assert flips / len(pts) <= 0.02


def test_grid_matches_pipeline_reconstruction():
    scene = small_scene(seed=7)
    assert default_grid(scene.points) == scene.ground_truth.grid


def test_truth_has_no_unlabeled():
    scene = small_scene(seed=8)
    assert (scene.ground_truth.labels != UNLABELED).all()


def test_bad_parameters():
    with pytest.raises(BadParameters):
        synth_scene(seed=0, extent=-1.0)
    with pytest.raises(BadParameters):
        synth_scene(seed=0, extent=10.0, point_step=0.3, noise=-0.5)
    with pytest.raises(BadParameters):
        synth_scene(seed=0, extent=1.0, transect_spacing=0.5, point_step=0.3)


def test_boundary_band_marks_class_edges():
    from conftest import make_labels

    arr = np.zeros((6, 6), dtype=np.uint8)
    arr[:, 3:] = 1
    band = boundary_band(make_labels(arr))
    assert band[:, 2].all() and band[:, 3].all()
    assert not band[:, 0].any() and not band[:, 5].any()


def test_end_to_end_noiseless_accuracy():
    scene = small_scene(seed=10)
    result = coarse_labels_from_points(scene.points, grid=scene.ground_truth.grid)
    acc = masked_accuracy(result.labels, scene.ground_truth)
    assert acc >= 0.95
