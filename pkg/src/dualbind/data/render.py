"""Procedural 32x32 scene renderer: landscapes, figures, and textile patterns.

Images are float arrays of shape (3, 32, 32) in [0, 1], snapped to the 1/255
grid so they survive a PPM round trip unchanged. Figure renders also return
a boolean person mask used for attention analysis.
"""

from __future__ import annotations

import numpy as np

from .text import BACKGROUND_KINDS, PERSON_KINDS, SHIRT_COLORS

SIZE = 32

SHIRT_RGB = {
    "red": (0.85, 0.15, 0.15),
    "blue": (0.15, 0.3, 0.9),
    "green": (0.15, 0.7, 0.2),
    "yellow": (0.95, 0.85, 0.15),
}
SKIN_TONES = ((0.96, 0.8, 0.69), (0.87, 0.67, 0.5), (0.62, 0.43, 0.3), (0.42, 0.28, 0.2))
HAIR_TONES = ((0.1, 0.07, 0.05), (0.35, 0.2, 0.08), (0.8, 0.65, 0.3))

_YY, _XX = np.mgrid[0:SIZE, 0:SIZE]


def quantize(img):
    """Snap to the 8-bit grid used by the on-disk format."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _vgrad(top, bottom, y0=0, y1=SIZE):
    t = np.clip((_YY - y0) / max(1, y1 - y0 - 1), 0, 1)
    top, bottom = np.asarray(top)[:, None, None], np.asarray(bottom)[:, None, None]
    return top * (1 - t) + bottom * t


def _paint(img, mask, rgb):
    img[:, mask] = np.asarray(rgb)[:, None]


def _disc(cx, cy, r):
    return (_XX - cx) ** 2 + (_YY - cy) ** 2 <= r * r


def _rect(x0, y0, x1, y1):
    return (_XX >= x0) & (_XX < x1) & (_YY >= y0) & (_YY < y1)


def _triangle(cx, base_y, half_w, height):
    """Upward triangle with apex at (cx, base_y - height)."""
    frac = (base_y - _YY) / max(height, 1)
    return (_YY <= base_y) & (frac >= 0) & (frac <= 1) & (np.abs(_XX - cx) <= half_w * (1 - frac))


def _jitter(rgb, rng, amount=0.06):
    return np.clip(np.asarray(rgb) + rng.uniform(-amount, amount, 3), 0, 1)


def render_background(kind: str, rng) -> np.ndarray:
    """Gradient landscape with two or three placed shapes."""
    n_shapes = int(rng.integers(2, 4))
    if kind == "mountain":
        img = _vgrad(_jitter((0.45, 0.65, 0.95), rng), (0.85, 0.9, 0.97))
        _paint(img, _YY >= 26, _jitter((0.3, 0.55, 0.25), rng))
        for _ in range(n_shapes):
            cx, h = rng.integers(4, 28), rng.integers(10, 18)
            tri = _triangle(cx, 26, rng.integers(7, 12), h)
            _paint(img, tri, _jitter((0.45, 0.45, 0.5), rng))
            _paint(img, tri & (_YY <= 26 - h + 4), (0.97, 0.97, 0.97))
    elif kind == "sea":
        horizon = int(rng.integers(13, 19))
        img = _vgrad(_jitter((0.55, 0.75, 0.95), rng), (0.95, 0.85, 0.75), 0, horizon)
        _paint(img, _YY >= horizon, _jitter((0.1, 0.35, 0.65), rng))
        img[:, horizon:] = img[:, horizon:] * (1 - 0.25 * (_YY[horizon:] - horizon) / SIZE)
        _paint(img, _disc(rng.integers(4, 28), rng.integers(3, horizon - 4), 3), (1.0, 0.9, 0.4))
        for _ in range(n_shapes - 1):
            bx, by = rng.integers(4, 26), rng.integers(horizon + 2, 28)
            _paint(img, _rect(bx, by, bx + 6, by + 2), (0.5, 0.3, 0.15))
            _paint(img, _triangle(bx + 3, by - 1, 2, 5), (0.97, 0.97, 0.95))
    elif kind == "forest":
        img = _vgrad(_jitter((0.7, 0.85, 0.95), rng), (0.8, 0.9, 0.8), 0, 20)
        _paint(img, _YY >= 20, _jitter((0.25, 0.5, 0.15), rng))
        for _ in range(n_shapes):
            tx = int(rng.integers(3, 29))
            _paint(img, _rect(tx - 1, 16, tx + 2, 26), (0.4, 0.25, 0.1))
            _paint(img, _triangle(tx, 20, rng.integers(4, 7), rng.integers(12, 18)), _jitter((0.1, 0.45, 0.15), rng))
    elif kind == "desert":
        img = _vgrad(_jitter((0.95, 0.7, 0.35), rng), (0.98, 0.9, 0.65), 0, 20)
        _paint(img, _YY >= 20, _jitter((0.88, 0.75, 0.45), rng))
        _paint(img, _disc(rng.integers(5, 27), rng.integers(3, 9), 3), (1.0, 0.97, 0.7))
        for _ in range(n_shapes - 1):
            cx = int(rng.integers(4, 28))
            _paint(img, _rect(cx - 1, 12, cx + 2, 24), (0.2, 0.55, 0.25))
            _paint(img, _rect(cx - 4, 16, cx - 1, 18) | _rect(cx - 4, 13, cx - 2, 18), (0.2, 0.55, 0.25))
    elif kind == "city":
        img = _vgrad(_jitter((0.6, 0.65, 0.75), rng), (0.85, 0.85, 0.88))
        _paint(img, _YY >= 28, (0.3, 0.3, 0.32))
        for _ in range(n_shapes):
            x0 = int(rng.integers(0, 24))
            w, h = int(rng.integers(6, 10)), int(rng.integers(10, 22))
            body = _rect(x0, 28 - h, x0 + w, 28)
            _paint(img, body, _jitter((0.35, 0.35, 0.4), rng))
            windows = body & ((_XX - x0) % 3 == 1) & ((_YY - (28 - h)) % 3 == 1)
            _paint(img, windows, (0.95, 0.9, 0.5))
    elif kind == "night":
        img = _vgrad(_jitter((0.03, 0.04, 0.15), rng, 0.02), (0.1, 0.12, 0.3))
        stars = rng.random((SIZE, SIZE)) < 0.03
        _paint(img, stars & (_YY < 20), (0.95, 0.95, 0.85))
        _paint(img, _disc(rng.integers(5, 27), rng.integers(4, 10), 3), (0.95, 0.93, 0.7))
        _paint(img, _YY >= 26, (0.05, 0.07, 0.1))
        for _ in range(n_shapes - 1):
            hx = int(rng.integers(2, 26))
            _paint(img, _rect(hx, 21, hx + 6, 26), (0.08, 0.08, 0.12))
            _paint(img, _rect(hx + 2, 23, hx + 4, 25), (0.9, 0.8, 0.3))
    else:
        raise ValueError(f"unknown background kind {kind!r}")
    img = img + rng.normal(0.0, 0.015, img.shape)
    return quantize(img)


def render_backdrop(rng) -> np.ndarray:
    """Plain studio backdrop for portraits."""
    base = rng.uniform(0.55, 0.9, 3)
    img = _vgrad(base, base * rng.uniform(0.7, 0.9))
    return quantize(img + rng.normal(0.0, 0.01, img.shape))


def draw_person(img, kind, color, rng, cx=None):
    """Draw a figure in place and return its boolean mask."""
    scale = 0.75 if kind == "child" else 1.0
    if cx is None:
        cx = int(rng.integers(11, 22))
    foot = int(rng.integers(29, 32))
    head_r = max(3, int(round(3.5 * scale)))
    torso_h = int(round(9 * scale))
    leg_h = int(round(8 * scale))
    half_w = max(3, int(round(4 * scale)))
    torso_y1 = foot - leg_h
    torso_y0 = torso_y1 - torso_h
    head_cy = torso_y0 - head_r
    skin = SKIN_TONES[rng.integers(len(SKIN_TONES))]
    hair = HAIR_TONES[rng.integers(len(HAIR_TONES))]
    shirt = _jitter(SHIRT_RGB[color], rng, 0.04)
    pants = _jitter((0.2, 0.2, 0.3), rng, 0.05)

    mask = np.zeros((SIZE, SIZE), dtype=bool)
    legs = _rect(cx - half_w + 1, torso_y1, cx - 0, foot) | _rect(cx + 1, torso_y1, cx + half_w, foot)
    _paint(img, legs, pants)
    mask |= legs
    arms = _rect(cx - half_w - 2, torso_y0 + 1, cx - half_w, torso_y1 - 1) | _rect(
        cx + half_w + 1, torso_y0 + 1, cx + half_w + 3, torso_y1 - 1
    )
    _paint(img, arms, skin)
    mask |= arms
    torso = _rect(cx - half_w, torso_y0, cx + half_w + 1, torso_y1)
    if kind == "woman":
        torso = torso | _triangle(cx, torso_y1 + 3, half_w + 2, torso_h)
        torso &= _YY < torso_y1 + 3
    _paint(img, torso, shirt)
    mask |= torso
    head = _disc(cx, head_cy, head_r)
    if kind == "woman":
        hair_m = _disc(cx, head_cy, head_r + 1) | _rect(cx - head_r - 1, head_cy, cx + head_r + 2, head_cy + head_r + 3)
        hair_m &= ~_rect(cx - head_r + 1, head_cy - 1, cx + head_r, head_cy + head_r + 1)
        hair_m |= _rect(cx - head_r, head_cy - head_r - 1, cx + head_r + 1, head_cy - head_r + 1)
        _paint(img, hair_m, hair)
        mask |= hair_m
    _paint(img, head, skin)
    mask |= head
    if kind != "woman":
        top = head & (_YY <= head_cy - head_r + 1)
        _paint(img, top, hair)
    eye_y = head_cy - 1 if head_r > 3 else head_cy
    img[:, eye_y, cx - 1] = 0.05
    img[:, eye_y, cx + 1] = 0.05
    img[:, min(head_cy + 2, SIZE - 1), cx - 1 : cx + 2] = np.array([0.6, 0.2, 0.2])[:, None]
    return mask


def render_person(kind, color, rng, background=None):
    """Figure on a studio backdrop, or on a named landscape if given."""
    img = render_backdrop(rng) if background is None else render_background(background, rng)
    img = img.copy()
    mask = draw_person(img, kind, color, rng)
    return quantize(img), mask


def render_pattern(rng) -> np.ndarray:
    """A textile-like pattern: stripes, dots, or checks in random colours."""
    c1, c2 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    period = int(rng.integers(3, 7))
    kind = rng.integers(3)
    if kind == 0:
        ang = rng.uniform(0, np.pi)
        phase = (np.cos(ang) * _XX + np.sin(ang) * _YY) / period
        sel = (np.floor(phase) % 2).astype(bool)
    elif kind == 1:
        sel = ((_XX % period) - period / 2) ** 2 + ((_YY % period) - period / 2) ** 2 <= (period / 3) ** 2
    else:
        sel = ((_XX // period + _YY // period) % 2).astype(bool)
    img = np.where(sel[None], c1[:, None, None], c2[:, None, None])
    return quantize(img + rng.normal(0.0, 0.02, img.shape))


def random_person_spec(rng):
    return str(rng.choice(PERSON_KINDS)), str(rng.choice(SHIRT_COLORS))


def random_background(rng):
    return str(rng.choice(BACKGROUND_KINDS))
