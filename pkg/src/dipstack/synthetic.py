"""Procedural images with known ground truth for tests and diagnostics."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def _grid(shape):
    h, w = shape
    return np.mgrid[0:h, 0:w].astype(np.float64)


def _colorize(v: np.ndarray, lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return lo + v[..., None] * (hi - lo)


def stripes(shape, period=8.0, angle=0.0, lo=(0.1, 0.1, 0.4), hi=(0.9, 0.9, 1.0)) -> np.ndarray:
    """Sinusoidal grating with ``period`` pixels along direction ``angle`` (radians)."""
    y, x = _grid(shape)
    phase = (x * np.cos(angle) + y * np.sin(angle)) * 2 * np.pi / period
    return _colorize(0.5 + 0.5 * np.sin(phase), lo, hi)


def checker(shape, cell=8, lo=(0.2, 0.05, 0.05), hi=(1.0, 0.7, 0.3)) -> np.ndarray:
    y, x = _grid(shape)
    v = ((x // cell + y // cell) % 2).astype(np.float64)
    return _colorize(v, lo, hi)


def dots(shape, spacing=10, radius=3.0, lo=(0.05, 0.3, 0.05), hi=(0.8, 1.0, 0.6)) -> np.ndarray:
    y, x = _grid(shape)
    dy = (y % spacing) - spacing / 2
    dx = (x % spacing) - spacing / 2
    v = np.clip(radius + 0.5 - np.hypot(dx, dy), 0.0, 1.0)
    return _colorize(v, lo, hi)


def smooth_noise(shape, seed=0, sigma=4.0, channels=3) -> np.ndarray:
    """Gaussian-filtered white noise rescaled to [0, 1] per channel."""
    rng = np.random.default_rng(seed)
    out = np.empty((*shape, channels))
    for c in range(channels):
        v = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
        out[..., c] = (v - v.min()) / (v.max() - v.min())
    return out


def scene(shape, seed=0) -> np.ndarray:
    """A clear 'landscape': smooth colour field plus a few hard-edged shapes."""
    rng = np.random.default_rng(seed)
    h, w = shape
    img = 0.15 + 0.6 * smooth_noise(shape, seed, sigma=max(h, w) / 10)
    y, x = _grid(shape)
    for _ in range(4):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(0.08, 0.2) * min(h, w)
        color = rng.uniform(0.0, 1.0, 3)
        inside = (y - cy) ** 2 + (x - cx) ** 2 < r * r
        img[inside] = color
    for _ in range(2):
        y0, x0 = rng.integers(0, h // 2), rng.integers(0, w // 2)
        img[y0 : y0 + h // 4, x0 : x0 + w // 6] = rng.uniform(0.0, 1.0, 3)
    return np.clip(img, 0.0, 1.0)


def split_lr(left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left half of one image beside the right half of another, plus the left-side mask."""
    out = right.copy()
    half = left.shape[1] // 2
    out[:, :half] = left[:, :half]
    mask = np.zeros(left.shape[:2])
    mask[:, :half] = 1.0
    return out, mask


def transmission_ramp(shape, lo=0.3, hi=1.0) -> np.ndarray:
    """Smooth transmission falling from ``hi`` at the bottom row to ``lo`` at the top."""
    h, w = shape
    y, x = _grid(shape)
    v = (y / max(h - 1, 1)) * 0.8 + 0.2 * (0.5 + 0.5 * np.cos(np.pi * x / max(w - 1, 1)))
    return lo + (hi - lo) * v


def hazy(clear: np.ndarray, t: np.ndarray, airlight) -> np.ndarray:
    t3 = t[..., None] if t.ndim == 2 else t
    return t3 * clear + (1.0 - t3) * np.asarray(airlight, dtype=np.float64)


def logo(shape, center=None, size=None) -> tuple[np.ndarray, np.ndarray]:
    """A ring-and-bar emblem: returns (colour layer, binary support mask)."""
    h, w = shape
    cy, cx = center or (h / 2, w / 2)
    size = size or 0.3 * min(h, w)
    y, x = _grid(shape)
    r = np.hypot(y - cy, x - cx)
    ring = (r < size) & (r > 0.6 * size)
    bar = (np.abs(y - cy) < 0.15 * size) & (np.abs(x - cx) < size)
    support = (ring | bar).astype(np.float64)
    color = np.ones((h, w, 3)) * np.array([1.0, 1.0, 1.0])
    return color, support


def watermark(clean: np.ndarray, mark: np.ndarray, opacity: np.ndarray) -> np.ndarray:
    o = opacity[..., None] if opacity.ndim == 2 else opacity
    return (1.0 - o) * clean + o * mark
