"""Synthetic LQ-HQ pair generation: blur, area downscale, noise, block compression.

One deterministic pass per seed. The compression stage is an 8x8 block-DCT
surrogate with uniform AC quantization driven by a JPEG-style quality number;
DC coefficients pass through unquantized so constant regions survive exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import gaussian_filter

from .errors import SizeError
from .image import validate_image

COMPRESSION_BLOCK = 8


@dataclass
class DegradationConfig:
    blur_sigma_range: tuple[float, float] = (0.2, 2.0)
    noise_sigma_range: tuple[float, float] = (0.0, 0.06)
    downscale_factor: int = 4
    compression_quality_range: tuple[int, int] = (30, 95)
    # Fixed pipeline order; kept as data so config files are self-describing.
    stage_order: tuple[str, ...] = ("blur", "resize", "noise", "compression")

    def __post_init__(self):
        lo, hi = self.blur_sigma_range
        if not (0.0 <= lo <= hi):
            raise ValueError(f"bad blur_sigma_range {self.blur_sigma_range}")
        lo, hi = self.noise_sigma_range
        if not (0.0 <= lo <= hi <= 0.2):
            raise ValueError(f"noise_sigma_range must lie in [0, 0.2], got {self.noise_sigma_range}")
        qlo, qhi = self.compression_quality_range
        if not (10 <= qlo <= qhi <= 95):
            raise ValueError(f"compression_quality_range must lie in [10, 95], got {self.compression_quality_range}")
        if self.downscale_factor < 2:
            raise ValueError(f"downscale_factor must be >= 2, got {self.downscale_factor}")
        if tuple(self.stage_order) != ("blur", "resize", "noise", "compression"):
            raise ValueError(f"unsupported stage_order {self.stage_order}")

    def to_dict(self) -> dict:
        return {
            "blur_sigma_range": list(self.blur_sigma_range),
            "noise_sigma_range": list(self.noise_sigma_range),
            "downscale_factor": self.downscale_factor,
            "compression_quality_range": list(self.compression_quality_range),
            "stage_order": list(self.stage_order),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationConfig":
        return cls(
            blur_sigma_range=tuple(d["blur_sigma_range"]),
            noise_sigma_range=tuple(d["noise_sigma_range"]),
            downscale_factor=int(d["downscale_factor"]),
            compression_quality_range=tuple(d["compression_quality_range"]),
            stage_order=tuple(d.get("stage_order", ("blur", "resize", "noise", "compression"))),
        )


def area_downscale(img: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = img.shape
    if h % factor or w % factor:
        raise SizeError(f"dimensions {img.shape[:2]} not divisible by factor {factor}")
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def _quant_step(quality: int) -> float:
    # Quality 95 (the configurable maximum) is lossless.
    return (95 - quality) / 1000.0


def block_compress(img: np.ndarray, quality: int) -> np.ndarray:
    """Quantize AC coefficients of each full 8x8 block (orthonormal DCT-II)."""
    step = _quant_step(quality)
    if step <= 0.0:
        return img.copy()
    out = img.copy()
    h, w, c = img.shape
    for ch in range(c):
        for i in range(0, h - h % COMPRESSION_BLOCK, COMPRESSION_BLOCK):
            for j in range(0, w - w % COMPRESSION_BLOCK, COMPRESSION_BLOCK):
                block = img[i : i + COMPRESSION_BLOCK, j : j + COMPRESSION_BLOCK, ch]
                coef = sfft.dctn(block, norm="ortho")
                dc = coef[0, 0]
                coef = np.round(coef / step) * step
                coef[0, 0] = dc
                out[i : i + COMPRESSION_BLOCK, j : j + COMPRESSION_BLOCK, ch] = sfft.idctn(coef, norm="ortho")
    return np.clip(out, 0.0, 1.0)


def degrade(hq: np.ndarray, cfg: DegradationConfig, seed: int) -> np.ndarray:
    """Four-stage degradation at 1/downscale_factor resolution, deterministic per seed.

    Parameter draws, in order: blur sigma, noise sigma, quality (uniform over
    the configured ranges), then the Gaussian noise field.
    """
    validate_image(hq)
    f = cfg.downscale_factor
    h, w, _ = hq.shape
    if h % f or w % f:
        raise SizeError(f"HQ dimensions {hq.shape[:2]} not divisible by {f}")
    rng = np.random.default_rng(seed)
    blur_sigma = rng.uniform(*cfg.blur_sigma_range)
    noise_sigma = rng.uniform(*cfg.noise_sigma_range)
    qlo, qhi = cfg.compression_quality_range
    quality = int(rng.integers(qlo, qhi + 1))

    x = hq
    if blur_sigma > 0.0:
        x = gaussian_filter(x, sigma=(blur_sigma, blur_sigma, 0.0), mode="reflect")
    x = area_downscale(x, f)
    x = np.clip(x + rng.normal(0.0, 1.0, x.shape) * noise_sigma, 0.0, 1.0)
    return block_compress(x, quality)


def make_pair(hq: np.ndarray, cfg: DegradationConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    return degrade(hq, cfg, seed), hq
