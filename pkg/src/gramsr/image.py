"""Image representation, I/O, color conversion, patch cropping, and fidelity metrics.

Images are numpy float64 arrays of shape (H, W, C) with C in {1, 3} and values
in [0, 1]. All functions here are pure and safe to call concurrently.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ShapeError, SizeError

# BT.601 full-range luma weights.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class MetricReport:
    """Full-reference quality summary: PSNR/SSIM plus named auxiliary scalars."""

    psnr: float
    ssim: float
    auxiliary: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "auxiliary": dict(self.auxiliary)}


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the (H, W, C) [0,1] image contract; returns the array unchanged."""
    if not isinstance(img, np.ndarray) or img.ndim != 3:
        raise ShapeError(f"expected (H, W, C) array, got {getattr(img, 'shape', None)}")
    h, w, c = img.shape
    if h < 1 or w < 1:
        raise SizeError(f"image dimensions must be >= 1, got {img.shape}")
    if c not in (1, 3):
        raise ShapeError(f"channel count must be 1 or 3, got {c}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def to_bytes_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def from_bytes_u8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def _read_ppm(data: bytes) -> np.ndarray:
    # Binary PPM/PGM: magic, whitespace/comment-separated header ints, raw block.
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError("not a binary PPM/PGM file")
    channels = 3 if data[:2] == b"P6" else 1
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM supported, maxval={maxval}")
    count = width * height * channels
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    if raw.size != count:
        raise FormatError("truncated PPM pixel data")
    return from_bytes_u8(raw.reshape(height, width, channels))


def _write_ppm(img: np.ndarray) -> bytes:
    h, w, c = img.shape
    magic = b"P6" if c == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (w, h)
    return header + to_bytes_u8(img).tobytes()


def load_image(path) -> np.ndarray:
    """Load a PNG or binary PPM/PGM file as an (H, W, C) float64 array in [0, 1]."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IOError(f"cannot read {path}: {exc}") from exc
    if data[:2] in (b"P5", b"P6"):
        return validate_image(_read_ppm(data))
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return validate_image(decode_png(data))
    raise FormatError(f"{path}: unsupported raster format")


def save_image(img: np.ndarray, path) -> None:
    """Write as binary PPM/PGM (.ppm/.pgm) or PNG (.png), 8-bit."""
    validate_image(img)
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm"):
        path.write_bytes(_write_ppm(img))
    elif suffix == ".png":
        path.write_bytes(encode_png(img))
    else:
        raise FormatError(f"unsupported output format {suffix!r}")


def decode_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im = im.convert("L") if im.mode in ("L", "I;16", "1") else im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"invalid PNG data: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return from_bytes_u8(arr)


def encode_png(img: np.ndarray) -> bytes:
    validate_image(img)
    raw = to_bytes_u8(img)
    mode = "RGB" if img.shape[2] == 3 else "L"
    buf = io.BytesIO()
    Image.fromarray(raw.squeeze(-1) if mode == "L" else raw, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def rgb_to_luminance(img: np.ndarray) -> np.ndarray:
    """BT.601 full-range Y plane of a 3-channel image, clipped to [0, 1]."""
    validate_image(img)
    if img.shape[2] != 3:
        raise ShapeError(f"rgb_to_luminance needs 3 channels, got {img.shape[2]}")
    y = img @ _LUMA_WEIGHTS
    return np.clip(y, 0.0, 1.0)[:, :, None]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on unit dynamic range, capped at 99 dB."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5), unit range.

    Inputs must be single-channel; convert with rgb_to_luminance first.
    """
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:
        if a.shape[2] != 1:
            raise ShapeError("ssim expects single-channel inputs")
        a, b = a[:, :, 0], b[:, :, 0]
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise SizeError(f"image {a.shape} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    wa = np.lib.stride_tricks.sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = np.lib.stride_tricks.sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu1 = np.tensordot(wa, kernel, axes=([2, 3], [0, 1]))
    mu2 = np.tensordot(wb, kernel, axes=([2, 3], [0, 1]))
    e_aa = np.tensordot(wa * wa, kernel, axes=([2, 3], [0, 1]))
    e_bb = np.tensordot(wb * wb, kernel, axes=([2, 3], [0, 1]))
    e_ab = np.tensordot(wa * wb, kernel, axes=([2, 3], [0, 1]))
    var1 = e_aa - mu1**2
    var2 = e_bb - mu2**2
    cov = e_ab - mu1 * mu2
    num = (2 * mu1 * mu2 + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu1**2 + mu2**2 + SSIM_C1) * (var1 + var2 + SSIM_C2)
    return float(np.mean(num / den))


def crop_patches(img: np.ndarray, size: int, count: int, seed: int) -> list[np.ndarray]:
    """Deterministic seeded random crops, each size x size and fully inside img.

    Offsets come from numpy's default PCG64 stream: per patch one integers()
    draw for the top offset, then one for the left offset.
    """
    validate_image(img)
    h, w, _ = img.shape
    if size > min(h, w):
        raise SizeError(f"patch size {size} exceeds image dimensions {img.shape[:2]}")
    rng = np.random.default_rng(seed)
    patches = []
    for _ in range(count):
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        patches.append(img[top : top + size, left : left + size].copy())
    return patches


def upsample_bicubic(img: np.ndarray, factor: int) -> np.ndarray:
    """Bicubic upscaling by an integer factor, clipped back to [0, 1]."""
    import torch.nn.functional as tf
    import torch

    validate_image(img)
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]
    up = tf.interpolate(t, scale_factor=factor, mode="bicubic", align_corners=False)
    return np.clip(up[0].numpy().transpose(1, 2, 0), 0.0, 1.0)
