"""
Augmentation pipeline
=====================

Each image gets a reproducible random subset of pixel ops. Every op
has a magnitude at which it does nothing.
"""

# %%
import numpy as np

from posekit import augment
from posekit.augment import NEUTRAL, AugmentPipeline
from posekit.roi import RoiBox

rng = np.random.default_rng(2)
yy, xx = np.mgrid[0:96, 0:128]
img = np.clip(0.15 + 0.6 * np.exp(-((xx - 64) ** 2 + (yy - 48) ** 2) / 600.0)
              + 0.02 * rng.normal(size=xx.shape), 0, 1)

# %%
for kind, fn in NEUTRAL.items():
    d = np.abs(fn(img, rng) - img).max()
    print(f"{kind.value:20s} at neutral magnitude: max change {d:.1e}")

# %%
# The ops chosen for sample i depend only on (seed, i).
pipe = AugmentPipeline(n_per_sample=3, seed=7)
box = RoiBox(40, 24, 88, 72)
for i in range(4):
    ops, _ = pipe.sample_ops(i, has_flare_box=True)
    out = augment.apply(pipe, img, i, box)
    print(i, [o.kind.value for o in ops], f"mean {out.mean():.3f}")

# %%
# Random convolution: a constant image c with kernel sum s becomes clip(c * s).
k = rng.normal(0, 1 / 3, (3, 3))
flat = np.full((8, 8), 0.4)
print(augment.rand_conv(flat, rng, blend=False, kernel=k)[4, 4], np.clip(0.4 * k.sum(), 0, 1))
