import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posekit import augment
from posekit.augment import NEUTRAL, AugmentPipeline, OpKind
from posekit.errors import BoxOutsideImage
from posekit.roi import RoiBox


@pytest.fixture
def image(rng):
    return rng.random((64, 80))


@pytest.mark.parametrize("kind", list(NEUTRAL), ids=lambda k: k.value)
def test_neutral_magnitude_is_identity(kind, image):
    out = NEUTRAL[kind](image, np.random.default_rng(0))
    assert out.shape == image.shape
    assert np.max(np.abs(out - image)) <= 1e-6


def test_posterize_8_bits_exact_on_arbitrary_floats(image):
    np.testing.assert_array_equal(augment.posterize(image, 8), image)


def test_posterize_drops_low_bits():
    img = np.array([[200 / 255.0, 7 / 255.0]])
    out = augment.posterize(img, 4)
    np.testing.assert_allclose(out * 255.0, [[192.0, 0.0]], atol=1e-9)


def test_solarize_strict_threshold():
    img = np.array([[0.2, 0.5, 0.8]])
    np.testing.assert_allclose(augment.solarize(img, 0.5), [[0.2, 0.5, 0.2]])


def test_hist_equalize_spreads_range(rng):
    img = 0.4 + 0.1 * rng.random((32, 32))
    out = augment.hist_equalize(img)
    assert out.min() == 0.0 and out.max() == pytest.approx(1.0)


def test_hist_equalize_constant_image_unchanged():
    img = np.full((8, 8), 0.3)
    np.testing.assert_array_equal(augment.hist_equalize(img), img)


def test_rand_conv_unit_kernel_full_blend_identity(image):
    out = augment.rand_conv(image, np.random.default_rng(1), kernel=np.ones((1, 1)), alpha=1.0)
    np.testing.assert_allclose(out, image, atol=1e-12)


def test_rand_conv_alpha_zero_identity(image):
    out = augment.rand_conv(image, np.random.default_rng(1), kernel_size=7, alpha=0.0)
    np.testing.assert_array_equal(out, image)


@given(c=st.floats(0.0, 1.0), k=st.sampled_from([1, 3, 5, 7]), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_rand_conv_constant_image(c, k, seed):
    rng = np.random.default_rng(seed)
    kernel = rng.normal(0.0, 1.0 / k, (k, k))
    img = np.full((16, 16), c)
    out = augment.rand_conv(img, rng, blend=False, kernel=kernel)
    np.testing.assert_allclose(out, np.clip(c * kernel.sum(), 0.0, 1.0), atol=1e-12)


def test_rand_conv_draw_replay(rng):
    from scipy import ndimage

    img = rng.random((24, 24))
    sizes = set()
    for seed in range(100):
        r = np.random.default_rng(seed)
        k = int(r.choice([1, 3, 5, 7]))
        kernel = r.normal(0.0, 1.0 / k, (k, k))
        sizes.add(k)
        want = np.clip(ndimage.convolve(img, kernel, mode="reflect"), 0.0, 1.0)
        got = augment.rand_conv(img, np.random.default_rng(seed), blend=False)
        np.testing.assert_allclose(got, want, atol=1e-12)
    assert sizes == {1, 3, 5, 7}


def test_solar_flare_box_outside_image(image):
    with pytest.raises(BoxOutsideImage):
        augment.solar_flare(image, np.random.default_rng(0), RoiBox(500, 500, 600, 600))


def test_solar_flare_brightens_and_is_local(rng):
    img = np.full((100, 100), 0.2)
    out = augment.solar_flare(img, rng, RoiBox(40, 40, 60, 60), intensity=0.5, radius=3.0)
    assert np.all(out >= img)
    assert out.max() > 0.6
    # cut off at 3 radii: far corner untouched
    assert out[0, 0] == img[0, 0] and out[99, 99] == img[99, 99]


def test_pipeline_zero_ops_identity(image):
    out = augment.apply(AugmentPipeline(n_per_sample=0), image, 3)
    np.testing.assert_array_equal(out, image)


def test_pipeline_rejects_too_many_ops():
    with pytest.raises(ValueError):
        AugmentPipeline(n_per_sample=11)


def test_pipeline_deterministic_per_index(image):
    p = AugmentPipeline(seed=7)
    box = RoiBox(10, 10, 50, 40)
    a = augment.apply(p, image, 5, box)
    b = augment.apply(p, image, 5, box)
    c = augment.apply(p, image, 6, box)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_ops_distinct_and_no_flare_without_box():
    p = AugmentPipeline(n_per_sample=9, seed=1)
    for i in range(50):
        ops, _ = p.sample_ops(i, has_flare_box=False)
        kinds = [o.kind for o in ops]
        assert len(set(kinds)) == len(kinds) == 9
        assert OpKind.SOLAR_FLARE not in kinds


def test_sweep_shape_and_range(rng):
    p = AugmentPipeline(seed=11)
    img = rng.random((48, 64))
    box = RoiBox(8, 8, 40, 40)
    for i in range(1000):
        out = augment.apply(p, img, i, box if i % 2 else None)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_png_round_trip(tmp_path, rng):
    q = rng.integers(0, 256, (20, 30)).astype(float) / 255.0
    path = tmp_path / "img.png"
    augment.save_png(q, path)
    np.testing.assert_array_equal(augment.load_png(path), q)
