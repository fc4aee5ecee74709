"""RandAugment-style pixel augmentation for single-channel float images in [0, 1].

Every op takes the image first, then its magnitude parameters; each has a
magnitude at which it returns the input unchanged (histogram equalization
excepted).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .errors import BoxOutsideImage
from .roi import RoiBox


class OpKind(enum.Enum):
    BRIGHTNESS_CONTRAST = "BrightnessContrast"
    GAUSSIAN_BLUR = "GaussianBlur"
    GAUSSIAN_NOISE = "GaussianNoise"
    POSTERIZE = "Posterize"
    SHARPEN = "Sharpen"
    SOLARIZE = "Solarize"
    HIST_EQUALIZE = "HistEqualize"
    GAMMA = "Gamma"
    SOLAR_FLARE = "SolarFlare"
    RAND_CONV = "RandConv"


def brightness_contrast(image, brightness=0.0, contrast=1.0):
    return np.clip(contrast * image + brightness, 0.0, 1.0)


def gaussian_blur(image, sigma=0.0):
    if sigma <= 0:
        return image.copy()
    return np.clip(ndimage.gaussian_filter(image, sigma, mode="reflect"), 0.0, 1.0)


def gaussian_noise(image, sigma=0.0, rng=None):
    if sigma <= 0:
        return image.copy()
    rng = np.random.default_rng() if rng is None else rng
    return np.clip(image + rng.normal(0.0, sigma, image.shape), 0.0, 1.0)


def posterize(image, bits=8):
    """Drop the ``8 - bits`` low bits of the 8-bit value, as a delta on the float image."""
    bits = int(bits)
    if bits >= 8:
        return image.copy()
    q = np.floor(image * 255.0 + 0.5).astype(np.uint8)
    kept = q & np.uint8((0xFF << (8 - bits)) & 0xFF)
    return np.clip(image - (q.astype(float) - kept) / 255.0, 0.0, 1.0)


def sharpen(image, amount=0.0):
    # blend of identity and a unit-sum Laplacian sharpening kernel
    if amount == 0:
        return image.copy()
    ident = np.zeros((3, 3))
    ident[1, 1] = 1.0
    effect = -np.ones((3, 3))
    effect[1, 1] = 9.0
    kernel = (1.0 - amount) * ident + amount * effect
    return np.clip(ndimage.convolve(image, kernel, mode="reflect"), 0.0, 1.0)


def solarize(image, threshold=1.0):
    """Invert pixels strictly above ``threshold``."""
    return np.where(image > threshold, 1.0 - image, image)


def hist_equalize(image):
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256)
    nonzero = hist[hist > 0]
    if len(nonzero) <= 1:
        return image.copy()
    cdf = np.cumsum(hist)
    cdf_min = cdf[hist > 0][0]
    lut = np.floor((cdf - cdf_min) * 255.0 / (q.size - cdf_min) + 0.5)
    return np.clip(lut[q] / 255.0, 0.0, 1.0)


def gamma(image, value=1.0):
    if value == 1.0:
        return image.copy()
    return np.clip(image, 0.0, 1.0) ** value


def solar_flare(image, rng: np.random.Generator, box: RoiBox, intensity: Optional[float] = None,
                radius: Optional[float] = None):
    """Additive Gaussian glare centred inside ``box`` and cut off at 3 radii."""
    h, w = image.shape
    x0, y0 = max(box.x_min, 0.0), max(box.y_min, 0.0)
    x1, y1 = min(box.x_max, float(w)), min(box.y_max, float(h))
    if not (x1 > x0 and y1 > y0):
        raise BoxOutsideImage(f"flare box {box} does not intersect the {w}x{h} image")
    cx = rng.uniform(x0, x1)
    cy = rng.uniform(y0, y1)
    if radius is None:
        radius = max(rng.uniform(0.05, 0.25) * box.side, 1.0)
    if intensity is None:
        intensity = rng.uniform(0.3, 0.8)
    if intensity == 0:
        return image.copy()
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2
    blob = intensity * np.exp(-r2 / (2.0 * radius**2))
    blob[r2 > (3.0 * radius) ** 2] = 0.0
    return np.clip(image + blob, 0.0, 1.0)


def rand_conv(image, rng: np.random.Generator, blend: bool = True, kernel_size: Optional[int] = None,
              kernel: Optional[np.ndarray] = None, alpha: Optional[float] = None):
    """Random-weight convolution, optionally blended with the input.

    ``kernel_size``, ``kernel`` and ``alpha`` override the random draws.
    """
    if kernel is None:
        k = int(rng.choice([1, 3, 5, 7])) if kernel_size is None else int(kernel_size)
        kernel = rng.normal(0.0, 1.0 / k, size=(k, k))
    kernel = np.atleast_2d(np.asarray(kernel, dtype=float))
    if blend:
        a = rng.uniform(0.0, 1.0) if alpha is None else float(alpha)
    else:
        a = 1.0
    if a == 0.0:
        return image.copy()
    conv = ndimage.convolve(image, kernel, mode="reflect")
    return np.clip(a * conv + (1.0 - a) * image, 0.0, 1.0)


@dataclass(frozen=True)
class AugmentOp:
    """An op kind plus the window its magnitudes are drawn from."""

    kind: OpKind
    magnitude_range: dict = field(default_factory=dict)

    def sample_and_apply(self, image, rng: np.random.Generator, flare_box=None):
        m = {name: rng.uniform(lo, hi) for name, (lo, hi) in self.magnitude_range.items()}
        k = self.kind
        if k is OpKind.BRIGHTNESS_CONTRAST:
            return brightness_contrast(image, m["brightness"], m["contrast"])
        if k is OpKind.GAUSSIAN_BLUR:
            return gaussian_blur(image, m["sigma"])
        if k is OpKind.GAUSSIAN_NOISE:
            return gaussian_noise(image, m["sigma"], rng)
        if k is OpKind.POSTERIZE:
            lo, hi = self.magnitude_range["bits"]
            return posterize(image, rng.integers(int(lo), int(hi) + 1))
        if k is OpKind.SHARPEN:
            return sharpen(image, m["amount"])
        if k is OpKind.SOLARIZE:
            return solarize(image, m["threshold"])
        if k is OpKind.HIST_EQUALIZE:
            return hist_equalize(image)
        if k is OpKind.GAMMA:
            return gamma(image, m["gamma"])
        if k is OpKind.SOLAR_FLARE:
            return solar_flare(image, rng, flare_box)
        if k is OpKind.RAND_CONV:
            return rand_conv(image, rng, blend=True)
        raise ValueError(k)


DEFAULT_WINDOWS = {
    OpKind.BRIGHTNESS_CONTRAST: {"brightness": (-0.2, 0.2), "contrast": (0.8, 1.2)},
    OpKind.GAUSSIAN_BLUR: {"sigma": (0.3, 2.0)},
    OpKind.GAUSSIAN_NOISE: {"sigma": (0.01, 0.05)},
    OpKind.POSTERIZE: {"bits": (4, 8)},
    OpKind.SHARPEN: {"amount": (0.2, 0.5)},
    OpKind.SOLARIZE: {"threshold": (0.5, 1.0)},
    OpKind.HIST_EQUALIZE: {},
    OpKind.GAMMA: {"gamma": (0.8, 1.25)},
    OpKind.SOLAR_FLARE: {},
    OpKind.RAND_CONV: {},
}

# magnitudes at which each op is the identity
NEUTRAL: dict[OpKind, Callable] = {
    OpKind.BRIGHTNESS_CONTRAST: lambda img, rng: brightness_contrast(img, 0.0, 1.0),
    OpKind.GAUSSIAN_BLUR: lambda img, rng: gaussian_blur(img, 0.0),
    OpKind.GAUSSIAN_NOISE: lambda img, rng: gaussian_noise(img, 0.0, rng),
    OpKind.POSTERIZE: lambda img, rng: posterize(img, 8),
    OpKind.SHARPEN: lambda img, rng: sharpen(img, 0.0),
    OpKind.SOLARIZE: lambda img, rng: solarize(img, 1.0),
    OpKind.GAMMA: lambda img, rng: gamma(img, 1.0),
    OpKind.SOLAR_FLARE: lambda img, rng: solar_flare(
        img, rng, RoiBox(0, 0, img.shape[1], img.shape[0]), intensity=0.0),
    OpKind.RAND_CONV: lambda img, rng: rand_conv(img, rng, blend=True, alpha=0.0),
}


def default_ops() -> tuple[AugmentOp, ...]:
    return tuple(AugmentOp(kind, dict(window)) for kind, window in DEFAULT_WINDOWS.items())


@dataclass(frozen=True)
class AugmentPipeline:
    ops: tuple = field(default_factory=default_ops)
    n_per_sample: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not 0 <= self.n_per_sample <= len(self.ops):
            raise ValueError(f"n_per_sample must be in [0, {len(self.ops)}]")

    def rng_for(self, sample_index: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed & (2**64 - 1), sample_index]))

    def sample_ops(self, sample_index: int, has_flare_box: bool = True):
        rng = self.rng_for(sample_index)
        pool = [op for op in self.ops if has_flare_box or op.kind is not OpKind.SOLAR_FLARE]
        n = min(self.n_per_sample, len(pool))
        order = rng.permutation(len(pool))[:n]
        return [pool[i] for i in order], rng


def apply(pipeline: AugmentPipeline, image: np.ndarray, sample_index: int = 0,
          flare_box: Optional[RoiBox] = None) -> np.ndarray:
    """Apply ``n_per_sample`` distinct randomly chosen ops in random order.

    Solar flare is only eligible when ``flare_box`` is given.
    """
    img = np.asarray(image, dtype=float)
    if pipeline.n_per_sample == 0:
        return img.copy()
    ops, rng = pipeline.sample_ops(sample_index, flare_box is not None)
    out = img
    for op in ops:
        out = op.sample_and_apply(out, rng, flare_box)
    return np.clip(out, 0.0, 1.0)


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float) / 255.0


def save_png(image: np.ndarray, path) -> None:
    from PIL import Image

    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q).save(path)
