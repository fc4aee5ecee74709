import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posekit.heatmap import decode, render_targets
from posekit.geometry import Pose, Quaternion, project
from posekit.roi import (CropTransform, RoiBox, crop_resize, enlarge, jitter, map_to_crop,
                         map_to_original, squarify, test_time_box)

coord = st.floats(-500, 500)
size = st.floats(1, 400)


def test_squarify_tall_box():
    b = squarify(RoiBox(10, 20, 70, 120))
    assert (b.x_min, b.y_min, b.x_max, b.y_max) == (-10, 20, 90, 120)


def test_squarify_square_unchanged():
    b = RoiBox(0, 0, 50, 50)
    assert squarify(b) == b


@given(coord, coord, size, size)
def test_squarify_idempotent(x, y, w, h):
    b = squarify(RoiBox(x, y, x + w, y + h))
    assert squarify(b) == b
    assert b.width == pytest.approx(max(w, h))


def test_enlarge_20_percent():
    b = enlarge(RoiBox(0, 0, 100, 100), 0.2)
    assert b.width == pytest.approx(120)
    np.testing.assert_allclose(b.center, [50, 50])
    assert enlarge(RoiBox(0, 0, 100, 100), 0.0) == RoiBox(0, 0, 100, 100)
    assert enlarge(RoiBox(0, 0, 100, 100), -0.5).width == pytest.approx(50)


@given(st.floats(-0.9, 3), st.floats(-0.9, 3))
def test_enlarge_composes(a, c):
    b = RoiBox(0, 0, 10, 10)
    assert enlarge(enlarge(b, a), c).width == pytest.approx((1 + a) * (1 + c) * 10)


def test_jitter_identity_and_determinism():
    b = RoiBox(0, 0, 100, 100)
    assert jitter(b, np.random.default_rng(1), 0.0, 0.0) == b
    assert jitter(b, np.random.default_rng(5)) == jitter(b, np.random.default_rng(5))


def test_jitter_bounds():
    b = RoiBox(0, 0, 100, 100)
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        j = jitter(b, rng, max_scale=0.2, max_shift=0.1)
        assert np.all(np.abs(j.center - b.center) <= 10.0 + 1e-9)
        assert 100.0 - 1e-9 <= j.width <= 120.0 + 1e-9


def test_map_to_crop_center_and_corner():
    t = CropTransform(RoiBox(-20, -30, 100, 90), 224)
    np.testing.assert_allclose(map_to_crop(t, [40, 30]), [112, 112])
    np.testing.assert_allclose(map_to_crop(t, [-20, -30]), [0, 0])


def test_map_roundtrip(rng):
    t = CropTransform(RoiBox(13.7, -4.2, 213.7, 195.8), 448)
    p = rng.uniform(-100, 400, (200, 2))
    np.testing.assert_allclose(map_to_original(t, map_to_crop(t, p)), p, atol=1e-9)


def test_crop_identity(rng):
    img = rng.random((40, 40))
    out = crop_resize(img, CropTransform(RoiBox(0, 0, 40, 40), 40))
    np.testing.assert_allclose(out, img, atol=1e-6)


def test_crop_constant_and_outside():
    img = np.full((50, 60), 0.7)
    out = crop_resize(img, CropTransform(RoiBox(10, 10, 30, 30), 16))
    np.testing.assert_allclose(out, 0.7, atol=1e-12)
    out = crop_resize(img, CropTransform(RoiBox(500, 500, 600, 600), 16))
    assert not out.any()


def test_keypoint_geometry_consistency(camera, model, rng):
    # project -> crop -> heatmap -> decode -> back to the original frame
    for _ in range(50):
        pose = Pose(Quaternion.random(rng), [rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(5, 40)])
        uv = project(camera, pose, model)
        t = CropTransform(test_time_box(RoiBox.bounding(uv)), 448)
        stack = render_targets(map_to_crop(t, uv) - 0.5, (448, 448), 4, 1.0)
        back = map_to_original(t, decode(stack, refine=True).coords + 0.5)
        assert np.abs(back - uv).max() < 1.5
