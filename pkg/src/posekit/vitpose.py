"""A small, batch-agnostic ViTPose-style network in plain numpy.

Patch embedding -> learned positional embedding -> pre-norm transformer
blocks -> two stride-2 transposed convolutions -> 1x1 conv to ``K``
heatmaps.  Every normalization is a per-token (per-location) layer norm,
so no statistic ever crosses the batch axis: an image's output does not
depend on what else is in the batch.

Inference only; weights are random (``init_weights``) or read from a
``VPW1`` file.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import BadResolution, DatasetIOError, SchemaVersionMismatch
from .heatmap import HeatmapStack

LN_EPS = 1e-6
HEAD_KERNEL = 4
MAGIC = b"VPW1"
_CFG_HEADER = struct.Struct("<4s9If")


@dataclass(frozen=True)
class VitConfig:
    patch: int = 16
    depth: int = 12
    dim: int = 384
    heads: int = 6
    mlp_ratio: float = 4.0
    in_channels: int = 3
    num_keypoints: int = 11
    head_channels: int = 128
    pos_grid: tuple = (14, 14)  # token grid the positional embedding is learned at

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        object.__setattr__(self, "pos_grid", tuple(int(g) for g in self.pos_grid))

    @property
    def mlp_dim(self) -> int:
        return int(self.dim * self.mlp_ratio)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def grid(self, height: int, width: int) -> tuple[int, int]:
        if height % self.patch or width % self.patch:
            raise BadResolution(f"{height}x{width} input not divisible by patch {self.patch}")
        return height // self.patch, width // self.patch


VIT_TINY = VitConfig(dim=192, depth=12, heads=3)
VIT_SMALL = VitConfig(dim=384, depth=12, heads=6)
# only the parameter count of the medium variant is known; this is the
# config whose count lands on it
VIT_MEDIUM = VitConfig(dim=512, depth=12, heads=8)
PRESETS = {"vit_t16": VIT_TINY, "vit_s16": VIT_SMALL, "vit_m16": VIT_MEDIUM}


def tensor_shapes(cfg: VitConfig) -> dict[str, tuple]:
    """Names and shapes of every parameter, in file order."""
    D, P, C, Dm, Hc, K = (cfg.dim, cfg.patch, cfg.in_channels, cfg.mlp_dim,
                          cfg.head_channels, cfg.num_keypoints)
    ks = HEAD_KERNEL
    shapes = {
        "patch_embed.weight": (D, C, P, P),
        "patch_embed.bias": (D,),
        "pos_embed": (cfg.pos_grid[0] * cfg.pos_grid[1], D),
    }
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        shapes.update({
            b + "norm1.weight": (D,), b + "norm1.bias": (D,),
            b + "attn.qkv.weight": (3 * D, D), b + "attn.qkv.bias": (3 * D,),
            b + "attn.proj.weight": (D, D), b + "attn.proj.bias": (D,),
            b + "norm2.weight": (D,), b + "norm2.bias": (D,),
            b + "mlp.fc1.weight": (Dm, D), b + "mlp.fc1.bias": (Dm,),
            b + "mlp.fc2.weight": (D, Dm), b + "mlp.fc2.bias": (D,),
        })
    shapes.update({
        "norm.weight": (D,), "norm.bias": (D,),
        "head.deconv1.weight": (D, Hc, ks, ks), "head.deconv1.bias": (Hc,),
        "head.norm1.weight": (Hc,), "head.norm1.bias": (Hc,),
        "head.deconv2.weight": (Hc, Hc, ks, ks), "head.deconv2.bias": (Hc,),
        "head.norm2.weight": (Hc,), "head.norm2.bias": (Hc,),
        "head.final.weight": (K, Hc), "head.final.bias": (K,),
    })
    return shapes


def count_params(cfg: VitConfig) -> int:
    """Closed-form parameter count of backbone plus head."""
    D, P, C, Dm, Hc, K = (cfg.dim, cfg.patch, cfg.in_channels, cfg.mlp_dim,
                          cfg.head_channels, cfg.num_keypoints)
    ks2 = HEAD_KERNEL**2
    n_tokens = cfg.pos_grid[0] * cfg.pos_grid[1]
    embed = C * P * P * D + D + n_tokens * D
    block = 4 * D + (3 * D * D + 3 * D) + (D * D + D) + (2 * D * Dm + Dm + D)
    head = (D * Hc * ks2 + 3 * Hc) + (Hc * Hc * ks2 + 3 * Hc) + (Hc * K + K)
    return embed + cfg.depth * block + 2 * D + head


@dataclass
class VitWeights:
    config: VitConfig
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = tensor_shapes(self.config)
        if list(self.tensors) != list(expected):
            missing = set(expected) ^ set(self.tensors)
            raise ValueError(f"weight names do not match config (differing: {sorted(missing)[:5]})")
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")
            self.tensors[name].setflags(write=False)

    def __getitem__(self, name):
        return self.tensors[name]

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def astype(self, dtype) -> "VitWeights":
        return VitWeights(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})


def _trunc_normal(rng, shape, std):
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def init_weights(cfg: VitConfig, rng: np.random.Generator, dtype=np.float32) -> VitWeights:
    """Truncated-normal (std 0.02) weights, zero biases, unit layer-norm scales."""
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name == "norm.weight":
            t = np.ones(shape)
        elif name.endswith(".bias"):
            t = np.zeros(shape)
        else:
            t = _trunc_normal(rng, shape, 0.02)
        tensors[name] = t.astype(dtype)
    return VitWeights(cfg, tensors)


def layer_norm(x: np.ndarray, weight=None, bias=None, eps: float = LN_EPS) -> np.ndarray:
    """Normalize over the last axis only."""
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0))).astype(x.dtype)


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _cubic_weights(t, a=-0.75):
    t = np.abs(t)
    return np.where(t <= 1, ((a + 2) * t - (a + 3)) * t * t + 1,
                    np.where(t < 2, ((a * t - 5 * a) * t + 8 * a) * t - 4 * a, 0.0))


def _bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-aligned Keys bicubic resampling matrix with edge clamping."""
    A = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    base = np.floor(src).astype(int)
    for tap in range(-1, 3):
        idx = base + tap
        wts = _cubic_weights(src - idx)
        np.add.at(A, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), wts)
    return A


def resize_pos_embed(pos: np.ndarray, grid_in: tuple, grid_out: tuple) -> np.ndarray:
    if tuple(grid_in) == tuple(grid_out):
        return pos
    g = pos.reshape(grid_in[0], grid_in[1], -1)
    Ah = _bicubic_matrix(grid_in[0], grid_out[0]).astype(pos.dtype)
    Aw = _bicubic_matrix(grid_in[1], grid_out[1]).astype(pos.dtype)
    out = np.einsum("ih,hwd->iwd", Ah, g)
    out = np.einsum("jw,iwd->ijd", Aw, out)
    return out.reshape(grid_out[0] * grid_out[1], -1)


def _as_batch(images: np.ndarray, cfg: VitConfig) -> np.ndarray:
    x = np.asarray(images)
    if x.ndim == 2:
        x = x[None, :, :, None]
    elif x.ndim == 3:
        x = x[None]
    if x.shape[-1] == 1 and cfg.in_channels != 1:
        x = np.repeat(x, cfg.in_channels, axis=-1)
    if x.shape[-1] != cfg.in_channels:
        raise BadResolution(f"expected {cfg.in_channels} channels, got {x.shape[-1]}")
    return x


def patch_embed(cfg: VitConfig, w: VitWeights, images: np.ndarray) -> np.ndarray:
    """``(B, H, W, C)`` images to ``(B, N, D)`` tokens with positional embedding."""
    x = _as_batch(images, cfg).astype(w["patch_embed.weight"].dtype, copy=False)
    B, H, W, C = x.shape
    gh, gw = cfg.grid(H, W)
    P = cfg.patch
    patches = x.reshape(B, gh, P, gw, P, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, gh * gw, C * P * P)
    Wp = w["patch_embed.weight"].reshape(cfg.dim, -1)
    tokens = patches @ Wp.T + w["patch_embed.bias"]
    return tokens + resize_pos_embed(w["pos_embed"], cfg.pos_grid, (gh, gw))


def attention_weights(cfg: VitConfig, w: VitWeights, block: int, x: np.ndarray) -> np.ndarray:
    """Softmax attention maps ``(B, heads, N, N)`` of one block on normalized tokens ``x``."""
    q, k, _ = _qkv(cfg, w, f"blocks.{block}.", x)
    return softmax(q @ k.transpose(0, 1, 3, 2) / math.sqrt(cfg.head_dim))


def _qkv(cfg, w, prefix, x):
    B, N, D = x.shape
    qkv = x @ w[prefix + "attn.qkv.weight"].T + w[prefix + "attn.qkv.bias"]
    qkv = qkv.reshape(B, N, 3, cfg.heads, cfg.head_dim).transpose(2, 0, 3, 1, 4)
    return qkv[0], qkv[1], qkv[2]


def transformer_block(cfg: VitConfig, w: VitWeights, i: int, x: np.ndarray) -> np.ndarray:
    p = f"blocks.{i}."
    B, N, D = x.shape
    h = layer_norm(x, w[p + "norm1.weight"], w[p + "norm1.bias"])
    q, k, v = _qkv(cfg, w, p, h)
    attn = softmax(q @ k.transpose(0, 1, 3, 2) / np.asarray(math.sqrt(cfg.head_dim), x.dtype))
    h = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, D)
    x = x + h @ w[p + "attn.proj.weight"].T + w[p + "attn.proj.bias"]
    h = layer_norm(x, w[p + "norm2.weight"], w[p + "norm2.bias"])
    h = gelu(h @ w[p + "mlp.fc1.weight"].T + w[p + "mlp.fc1.bias"])
    return x + h @ w[p + "mlp.fc2.weight"].T + w[p + "mlp.fc2.bias"]


def conv_transpose2x(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Transposed conv, kernel 4, stride 2, padding 1: ``(B, h, w, Cin) -> (B, 2h, 2w, Cout)``."""
    B, h, w_, _ = x.shape
    ks = weight.shape[2]
    contrib = np.einsum("bhwc,cokl->bhwklo", x, weight)
    full = np.zeros((B, 2 * h + 2, 2 * w_ + 2, weight.shape[1]), dtype=x.dtype)
    for ki in range(ks):
        for kj in range(ks):
            full[:, ki:ki + 2 * h:2, kj:kj + 2 * w_:2] += contrib[:, :, :, ki, kj]
    return full[:, 1:-1, 1:-1] + bias


def forward_features(cfg: VitConfig, w: VitWeights, images: np.ndarray) -> np.ndarray:
    """Backbone output regrouped to the token grid ``(B, H/P, W/P, D)``."""
    x = patch_embed(cfg, w, images)
    for i in range(cfg.depth):
        x = transformer_block(cfg, w, i, x)
    x = layer_norm(x, w["norm.weight"], w["norm.bias"])
    B = x.shape[0]
    H, W = _as_batch(images, cfg).shape[1:3]
    gh, gw = cfg.grid(H, W)
    return x.reshape(B, gh, gw, cfg.dim)


def head(cfg: VitConfig, w: VitWeights, feats: np.ndarray) -> np.ndarray:
    x = conv_transpose2x(feats, w["head.deconv1.weight"], w["head.deconv1.bias"])
    x = gelu(layer_norm(x, w["head.norm1.weight"], w["head.norm1.bias"]))
    x = conv_transpose2x(x, w["head.deconv2.weight"], w["head.deconv2.bias"])
    x = gelu(layer_norm(x, w["head.norm2.weight"], w["head.norm2.bias"]))
    out = x @ w["head.final.weight"].T + w["head.final.bias"]
    return out.transpose(0, 3, 1, 2)  # (B, K, H/4, W/4)


def forward_batch(cfg: VitConfig, w: VitWeights, images: np.ndarray) -> np.ndarray:
    """Heatmaps ``(B, K, H/4, W/4)`` for a batch of ``(B, H, W, C)`` images."""
    return head(cfg, w, forward_features(cfg, w, images))


def forward(cfg: VitConfig, w: VitWeights, image: np.ndarray) -> HeatmapStack:
    """Heatmap stack for one ``H x W x C`` (or ``H x W`` grayscale) image."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    maps = forward_batch(cfg, w, image[None])[0]
    stride = image.shape[0] // maps.shape[1]
    return HeatmapStack(maps, stride)


def save_weights(w: VitWeights, path) -> None:
    """Write a ``VPW1`` file: config header, tensor count, then rank/dims/float32 data per tensor."""
    cfg = w.config
    with open(path, "wb") as fh:
        fh.write(_CFG_HEADER.pack(MAGIC, cfg.patch, cfg.depth, cfg.dim, cfg.heads, cfg.in_channels,
                                  cfg.num_keypoints, cfg.head_channels, cfg.pos_grid[0],
                                  cfg.pos_grid[1], cfg.mlp_ratio))
        fh.write(struct.pack("<I", len(w.tensors)))
        for t in w.tensors.values():
            fh.write(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_weights(path) -> VitWeights:
    data = Path(path).read_bytes()
    if len(data) < _CFG_HEADER.size + 4:
        raise DatasetIOError(f"{path}: truncated weight file")
    magic, patch, depth, dim, heads, cin, K, hc, gh, gw, ratio = _CFG_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SchemaVersionMismatch(f"{path}: bad magic {magic!r}")
    cfg = VitConfig(patch=patch, depth=depth, dim=dim, heads=heads, mlp_ratio=ratio,
                    in_channels=cin, num_keypoints=K, head_channels=hc, pos_grid=(gh, gw))
    off = _CFG_HEADER.size
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    names = list(tensor_shapes(cfg))
    if n != len(names):
        raise SchemaVersionMismatch(f"{path}: {n} tensors, config implies {len(names)}")
    tensors = {}
    try:
        for name in names:
            (rank,) = struct.unpack_from("<I", data, off)
            dims = struct.unpack_from(f"<{rank}I", data, off + 4)
            off += 4 + 4 * rank
            size = int(np.prod(dims))
            if off + 4 * size > len(data):
                raise DatasetIOError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(data, "<f4", size, off).reshape(dims).astype(np.float32)
            off += 4 * size
    except struct.error as exc:
        raise DatasetIOError(f"{path}: truncated weight file") from exc
    return VitWeights(cfg, tensors)
