import hashlib
import os

import numpy as np
import pytest

from defocuskit import imgcore, io, synthcam
from defocuskit.synthcam import CameraParams

CAM = CameraParams()


def test_coc_worked_example():
    # A = 50/2.8; coc = A*50*2000/(4000*1950) mm = 0.22894 mm -> 22.894 px * 0.25
    assert CAM.aperture == pytest.approx(17.857, abs=1e-3)
    expected = (50 / 2.8) * 50 * 2000 / (4000 * 1950) / 0.01 * 0.25
    assert synthcam.coc_sigma(4000, CAM) == pytest.approx(expected, rel=1e-12)
    assert synthcam.coc_sigma(4000, CAM) == pytest.approx(5.7236, abs=1e-3)


def test_coc_zero_at_focus_and_scales_with_aperture():
    assert synthcam.coc_sigma(CAM.focus_distance, CAM) == 0.0
    slow = CameraParams(f_number=5.6)
    assert synthcam.coc_sigma(4000, slow) == pytest.approx(synthcam.coc_sigma(4000, CAM) / 2, rel=1e-12)


def test_coc_increasing_in_inverse_depth_offset():
    depths = np.concatenate([np.linspace(300, 1999, 400), np.linspace(2001, 50000, 400)])
    sig = synthcam.coc_sigma(depths, CAM)
    key = np.abs(1 / depths - 1 / CAM.focus_distance)
    order = np.argsort(key)
    assert np.all(np.diff(sig[order]) > 0)
    # continuity around the focal plane
    assert synthcam.coc_sigma(2000.001, CAM) < 1e-5


@pytest.mark.parametrize("kwargs", [dict(focal_length=0), dict(f_number=-1), dict(focus_distance=40),
                                    dict(pixel_pitch=0)])
def test_camera_validation(kwargs):
    with pytest.raises(ValueError):
        CameraParams(**kwargs)


def test_coc_rejects_nonpositive_depth():
    with pytest.raises(ValueError):
        synthcam.coc_sigma(0.0, CAM)


def test_render_in_focus_is_identity(rng):
    img = rng.random((16, 16))
    out, truth = synthcam.render_dof(img, np.full(img.shape, CAM.focus_distance), CAM, layers=4)
    np.testing.assert_array_equal(out, img)
    assert np.all(truth == 0)


@pytest.mark.parametrize("layers", [1, 5])
def test_render_uniform_depth_equals_gaussian_blur(rng, layers):
    img = rng.random((20, 20))
    depth = np.full(img.shape, 3000.0)
    out, truth = synthcam.render_dof(img, depth, CAM, layers=layers)
    expected = imgcore.gaussian_blur(img, synthcam.coc_sigma(3000.0, CAM))
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_render_two_planes(rng):
    img = rng.random((20, 20))
    depth = np.full(img.shape, CAM.focus_distance)
    depth[:, 10:] = 6000.0
    _, truth = synthcam.render_dof(img, depth, CAM, layers=3)
    assert np.all(truth[:, :10] == 0) and np.all(truth[:, 10:] > 0)


def test_ground_truth_independent_of_content(rng):
    depth = rng.uniform(1000, 8000, (12, 12))
    _, t1 = synthcam.render_dof(rng.random((12, 12)), depth, CAM)
    _, t2 = synthcam.render_dof(np.zeros((12, 12)), depth, CAM)
    np.testing.assert_array_equal(t1, t2)


def test_render_shape_mismatch():
    with pytest.raises(ValueError):
        synthcam.render_dof(np.zeros((4, 4)), np.ones((4, 5)) * 1000, CAM)


def _digest(folder):
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(folder)):
        for name in sorted(files):
            with open(os.path.join(root, name), "rb") as fh:
                h.update(name.encode() + fh.read())
    return h.hexdigest()


def test_corpus_counts_and_determinism(tmp_path):
    a = synthcam.make_corpus(7, 10, 10, CAM, tmp_path / "a", size=48)
    b = synthcam.make_corpus(7, 10, 10, CAM, tmp_path / "b", size=48)
    assert a == b
    assert len(a) == 20
    assert sum(r["label"] == "real" for r in a) == 10
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    records = synthcam.read_manifest(tmp_path / "a" / "manifest.jsonl")
    assert all(os.path.exists(r["image"]) and os.path.exists(r["gt_blur"]) for r in records)


def test_corpus_ground_truth_direction(tmp_path):
    records = synthcam.make_corpus(3, 12, 12, CAM, tmp_path, size=48)
    records = synthcam.read_manifest(tmp_path / "manifest.jsonl")
    real = [io.read_fmap(r["gt_blur"]).mean() for r in records if r["label"] == "real"]
    focused = [io.read_fmap(r["gt_blur"]).mean() for r in records if r["kind"] == "all-in-focus"]
    assert focused, "seeded corpus should contain all-in-focus fakes"
    assert np.mean(real) > np.mean(focused)


def test_corpus_item_seed_is_seed_plus_index():
    recs = synthcam.make_corpus(100, 2, 2, CAM, None, size=32)
    img, _, kind = synthcam.make_item(100 + 3, "fake", CAM, size=32)
    assert recs[3]["kind"] == kind
