"""
A ViT keypoint head in numpy
============================

Random weights are enough to check shapes, parameter counts and the
cost of higher input resolutions.
"""

# %%
import time

import numpy as np

from posekit import vitpose as vp

for name, cfg in vp.PRESETS.items():
    print(f"{name}: dim {cfg.dim}, depth {cfg.depth}, heads {cfg.heads}, "
          f"{vp.count_params(cfg) / 1e6:.2f}M parameters")

# %%
# A small configuration keeps the forward pass quick on a laptop.
cfg = vp.VitConfig(dim=64, depth=4, heads=4, head_channels=32)
w = vp.init_weights(cfg, np.random.default_rng(0))
for res in (224, 448):
    img = np.random.default_rng(res).random((res, res)).astype(np.float32)
    t0 = time.perf_counter()
    stack = vp.forward(cfg, w, img)
    dt = time.perf_counter() - t0
    tokens = (res // cfg.patch) ** 2
    print(f"{res}x{res}: {tokens} tokens -> heatmaps {stack.shape}, {1e3 * dt:.0f} ms")

# %%
# The positional table is learned on a 14x14 grid and resized bicubically.
pos = w["pos_embed"]
print(pos.shape, "->", vp.resize_pos_embed(pos, (14, 14), (28, 28)).shape)
