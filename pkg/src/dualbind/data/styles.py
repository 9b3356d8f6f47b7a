"""Six procedural image styles standing in for real artistic styles.

Every transform is a pure function of ``(image, parameters)`` and declares
whether applying it twice equals applying it once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import InvalidArgumentError
from .render import SIZE, quantize

STYLE_NAMES = (
    "realism_analog",
    "pixelation",
    "polygonal",
    "palette_shift",
    "sureb_analog",
    "anime_analog",
)

# name -> (default value, low, high)
_PARAMS = {
    "realism_analog": {},
    "pixelation": {"block": (4, 2, 8), "levels": (6, 2, 32)},
    "polygonal": {"cells": (72, 4, 128), "layout_seed": (0, 0, 2**31 - 1), "edge": (0.3, 0.0, 1.0)},
    "palette_shift": {"warmth": (0.6, 0.0, 1.0), "fade": (0.15, 0.0, 0.5)},
    "sureb_analog": {"contrast": (1.7, 1.0, 3.0), "saturation": (1.6, 1.0, 3.0), "vignette": (0.45, 0.0, 1.0)},
    "anime_analog": {"levels": (4, 2, 16), "outline": (0.12, 0.01, 1.0)},
}

IDEMPOTENT = {
    "realism_analog": True,
    "pixelation": True,
    "polygonal": False,
    "palette_shift": False,
    "sureb_analog": False,
    "anime_analog": False,
}


@dataclass(frozen=True)
class StyleTransformSpec:
    name: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _PARAMS:
            raise InvalidArgumentError(f"unknown style {self.name!r}; expected one of {STYLE_NAMES}")
        declared = _PARAMS[self.name]
        for key, value in self.parameters.items():
            if key not in declared:
                raise InvalidArgumentError(f"{self.name} has no parameter {key!r}")
            _, lo, hi = declared[key]
            if not lo <= value <= hi:
                raise InvalidArgumentError(f"{self.name}.{key}={value} outside [{lo}, {hi}]")

    def resolved(self):
        params = {k: v[0] for k, v in _PARAMS[self.name].items()}
        params.update(self.parameters)
        return params

    @property
    def idempotent(self):
        return IDEMPOTENT[self.name]

    def __call__(self, image):
        return apply_style(self, image)


def _pixelation(img, block, levels):
    block, levels = int(block), int(levels)
    c, h, w = img.shape
    hb, wb = -(-h // block), -(-w // block)
    padded = np.pad(img, ((0, 0), (0, hb * block - h), (0, wb * block - w)), mode="edge")
    means = padded.reshape(c, hb, block, wb, block).mean(axis=(2, 4))
    means = np.round(means * (levels - 1)) / (levels - 1)
    out = means.repeat(block, axis=1).repeat(block, axis=2)
    return out[:, :h, :w]


def _voronoi_labels(cells, seed):
    rng = np.random.default_rng(int(seed))
    pts = rng.uniform(0, SIZE, (int(cells), 2))
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    d = (yy[..., None] - pts[:, 0]) ** 2 + (xx[..., None] - pts[:, 1]) ** 2
    return d.argmin(axis=-1)


def _polygonal(img, cells, layout_seed, edge):
    labels = _voronoi_labels(cells, layout_seed)
    n = int(cells)
    out = np.empty_like(img)
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n)
    for ch in range(3):
        sums = np.bincount(flat, weights=img[ch].ravel(), minlength=n)
        out[ch] = (sums / np.maximum(counts, 1))[labels]
    border = np.zeros(labels.shape, dtype=bool)
    border[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    border[1:, :] |= labels[1:, :] != labels[:-1, :]
    out[:, border] *= 1.0 - edge
    return out


def _palette_shift(img, warmth, fade):
    sepia = np.array([[0.393, 0.769, 0.189], [0.349, 0.686, 0.168], [0.272, 0.534, 0.131]])
    m = (1 - warmth) * np.eye(3) + warmth * sepia
    out = np.einsum("ij,jhw->ihw", m, img)
    return out * (1 - fade) + fade * 0.5


def _sureb(img, contrast, saturation, vignette):
    gray = img.mean(axis=0, keepdims=True)
    out = gray + saturation * (img - gray)
    out = 0.5 + contrast * (out - 0.5)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    r2 = ((yy - (SIZE - 1) / 2) ** 2 + (xx - (SIZE - 1) / 2) ** 2) / ((SIZE / 2) ** 2 * 2)
    return out * (1 - vignette * r2)[None]


def _anime(img, levels, outline):
    levels = int(levels)
    smooth = ndimage.median_filter(img, size=(1, 3, 3), mode="nearest")
    post = np.round(smooth * (levels - 1)) / (levels - 1)
    lum = post.mean(axis=0)
    gy, gx = ndimage.sobel(lum, 0, mode="nearest"), ndimage.sobel(lum, 1, mode="nearest")
    edges = np.hypot(gx, gy) > outline * 4
    post[:, edges] *= 0.25
    return post


_IMPL = {
    "realism_analog": lambda img: img,
    "pixelation": _pixelation,
    "polygonal": _polygonal,
    "palette_shift": _palette_shift,
    "sureb_analog": _sureb,
    "anime_analog": _anime,
}


def apply_style(spec: StyleTransformSpec, image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (3, SIZE, SIZE):
        raise InvalidArgumentError(f"expected image of shape (3, {SIZE}, {SIZE}), got {image.shape}")
    return quantize(_IMPL[spec.name](image, **spec.resolved()))


def default_aux_style(target: str) -> StyleTransformSpec:
    """Auxiliary style paired with a target: realism for every analog except
    the polygonal one, which gets the soft palette look."""
    if target == "polygonal":
        return StyleTransformSpec("palette_shift", {"warmth": 0.3, "fade": 0.1})
    return StyleTransformSpec("realism_analog")
