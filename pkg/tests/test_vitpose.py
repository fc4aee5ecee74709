import numpy as np
import pytest

from posekit import vitpose as vp
from posekit.errors import BadResolution
from posekit.heatmap import HeatmapStack

TINY = vp.VitConfig(dim=32, depth=2, heads=4, head_channels=16, num_keypoints=11)


@pytest.fixture(scope="module")
def tiny_weights():
    return vp.init_weights(TINY, np.random.default_rng(0))


def test_layer_norm_constant_vector_gives_zero():
    np.testing.assert_array_equal(vp.layer_norm(np.full((3, 8), 2.5)), np.zeros((3, 8)))


def test_layer_norm_affine_invariant(rng):
    x = rng.normal(size=(5, 64))
    np.testing.assert_allclose(vp.layer_norm(x, eps=0.0), vp.layer_norm(5 * x + 3, eps=0.0), atol=1e-6)


def test_layer_norm_moments(rng):
    y = vp.layer_norm(rng.normal(2.0, 3.0, size=(10, 384)))
    assert np.abs(y.mean(-1)).max() < 1e-6
    assert np.abs(y.var(-1) - 1).max() < 1e-5


def test_gelu_values():
    assert vp.gelu(np.array([0.0]))[0] == 0.0
    assert vp.gelu(np.array([1.0]))[0] == pytest.approx(0.8413447460685429)


@pytest.mark.parametrize("res,tokens,out", [(224, 196, 56), (448, 784, 112)])
def test_token_and_heatmap_shapes(tiny_weights, res, tokens, out):
    img = np.random.default_rng(1).random((res, res)).astype(np.float32)
    assert vp.patch_embed(TINY, tiny_weights, img).shape == (1, tokens, TINY.dim)
    stack = vp.forward(TINY, tiny_weights, img)
    assert isinstance(stack, HeatmapStack)
    assert stack.shape == (11, out, out) and stack.stride == 4


def test_param_count_small_and_tiny():
    assert abs(vp.count_params(vp.VIT_SMALL) - 22.7e6) / 22.7e6 < 0.02
    assert abs(vp.count_params(vp.VIT_TINY) - 6.2e6) / 6.2e6 < 0.05


@pytest.mark.parametrize("cfg", [TINY, vp.VitConfig(dim=48, depth=1, heads=3, head_channels=8)])
def test_param_count_matches_init(cfg):
    w = vp.init_weights(cfg, np.random.default_rng(0))
    assert w.num_params() == vp.count_params(cfg)


def test_block_params_scale_quadratically():
    def per_block(dim):
        a = vp.count_params(vp.VitConfig(dim=dim, depth=2, heads=4))
        b = vp.count_params(vp.VitConfig(dim=dim, depth=1, heads=4))
        return a - b

    assert per_block(768) / per_block(384) == pytest.approx(4.0, rel=0.01)


def test_attention_rows_sum_to_one(tiny_weights):
    x = vp.patch_embed(TINY, tiny_weights, np.random.default_rng(2).random((64, 64)))
    h = vp.layer_norm(x, tiny_weights["blocks.0.norm1.weight"], tiny_weights["blocks.0.norm1.bias"])
    a = vp.attention_weights(TINY, tiny_weights, 0, h)
    assert a.shape == (1, TINY.heads, 16, 16)
    np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-6)


def _batch(rng, n=3, res=64):
    return rng.random((n, res, res, 3))


def test_batch_invariance_float64(tiny_weights, rng):
    w = tiny_weights.astype(np.float64)
    imgs = _batch(rng)
    full = vp.forward_batch(TINY, w, imgs)
    for i in range(len(imgs)):
        np.testing.assert_allclose(vp.forward_batch(TINY, w, imgs[i:i + 1])[0], full[i],
                                   rtol=1e-12, atol=1e-12)


def test_batch_invariance_float32(tiny_weights, rng):
    imgs = _batch(rng).astype(np.float32)
    full = vp.forward_batch(TINY, tiny_weights, imgs)
    scale = np.abs(full).max()
    for i in range(len(imgs)):
        single = vp.forward_batch(TINY, tiny_weights, imgs[i:i + 1])[0]
        assert np.abs(single - full[i]).max() / scale < 1e-5


def test_bad_resolution(tiny_weights):
    with pytest.raises(BadResolution):
        vp.forward(TINY, tiny_weights, np.zeros((100, 100), np.float32))


def test_pos_embed_resize_identity_and_constant():
    pos = np.random.default_rng(0).normal(size=(14 * 14, 8))
    assert vp.resize_pos_embed(pos, (14, 14), (14, 14)) is pos
    const = np.ones((14 * 14, 4))
    np.testing.assert_allclose(vp.resize_pos_embed(const, (14, 14), (28, 28)), 1.0, atol=1e-12)
    assert vp.resize_pos_embed(pos, (14, 14), (28, 28)).shape == (784, 8)


def test_conv_transpose_doubles_spatial_size(rng):
    x = rng.normal(size=(2, 5, 7, 3))
    wt = rng.normal(size=(3, 4, 4, 4))
    assert vp.conv_transpose2x(x, wt, np.zeros(4)).shape == (2, 10, 14, 4)


def test_weights_round_trip(tmp_path, tiny_weights):
    path = tmp_path / "w.vpw"
    vp.save_weights(tiny_weights, path)
    back = vp.load_weights(path)
    assert back.config == TINY
    for name, t in tiny_weights.tensors.items():
        np.testing.assert_array_equal(back[name], t)
