"""Procedurally generated texture corpus: sinusoid mixtures, Voronoi mosaics,
filtered noise. Deterministic per seed; every image carries the repeated-
pattern statistics that second-order feature losses respond to.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataError


def _normalize(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-9:
        return np.full_like(img, 0.5)
    return (img - lo) / (hi - lo)


def sinusoid_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    canvas = np.zeros((size, size, 3))
    for _ in range(rng.integers(3, 6)):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(2.0, 14.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        weights = rng.uniform(0.2, 1.0, 3)
        canvas += wave[:, :, None] * weights[None, None, :]
    return _normalize(canvas)


def voronoi_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    m = int(rng.integers(6, 18))
    pts = rng.uniform(0, size, (m, 2))
    colors = rng.uniform(0.05, 0.95, (m, 3))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d2 = (yy[:, :, None] - pts[None, None, :, 0]) ** 2 + (xx[:, :, None] - pts[None, None, :, 1]) ** 2
    nearest = np.argmin(d2, axis=2)
    img = colors[nearest]
    shade = _normalize(np.sqrt(np.min(d2, axis=2)))[:, :, None]
    return np.clip(img * (0.7 + 0.3 * shade), 0.0, 1.0)


def filtered_noise_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    sigma = rng.uniform(1.0, 3.0)
    noise = rng.standard_normal((size, size, 3))
    smooth = gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="wrap")
    return _normalize(smooth)


_KINDS = (sinusoid_texture, voronoi_texture, filtered_noise_texture)


def generate_texture(size: int, seed: int) -> np.ndarray:
    """One texture image; kind and parameters drawn from the seed."""
    rng = np.random.default_rng(seed)
    kind = int(rng.integers(0, len(_KINDS) + 1))
    if kind < len(_KINDS):
        return _KINDS[kind](size, rng)
    a = _KINDS[int(rng.integers(0, 3))](size, rng)
    b = _KINDS[int(rng.integers(0, 3))](size, rng)
    return 0.5 * a + 0.5 * b


def build_corpus(count: int, size: int, seed: int) -> list[np.ndarray]:
    """Deterministic list of HQ texture images (seed stream: seed*100003 + i)."""
    if count < 1:
        raise DataError(f"corpus must contain at least one image, got {count}")
    return [generate_texture(size, seed * 100003 + i) for i in range(count)]
