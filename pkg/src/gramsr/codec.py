"""Frozen, exactly invertible latent codec: space-to-depth rearrangement.

encode maps each s x s x C pixel block to one latent cell with C*s*s channels;
decode is its exact inverse. Both are linear, lossless, and dtype-preserving,
and accept numpy arrays or torch tensors in (H, W, C) layout (an optional
leading batch axis is allowed). Values are never clipped here: clipping to
[0, 1] happens only at the image-emission boundary.
"""
from __future__ import annotations

import numpy as np
import torch

from .errors import ShapeError, SizeError

DEFAULT_STRIDE = 4


def _moveaxes(x, order):
    if isinstance(x, torch.Tensor):
        return x.permute(*order).contiguous()
    return np.ascontiguousarray(x.transpose(order))


def encode(x, stride: int = DEFAULT_STRIDE):
    """(..., H, W, C) image -> (..., H/s, W/s, C*s*s) latent."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected (H, W, C) or (B, H, W, C), got {x.shape}")
    batched = x.ndim == 4
    h, w, c = x.shape[-3], x.shape[-2], x.shape[-1]
    if h % stride or w % stride:
        raise SizeError(f"dimensions {(h, w)} not divisible by stride {stride}")
    lead = x.shape[:1] if batched else ()
    z = x.reshape(*lead, h // stride, stride, w // stride, stride, c)
    # cell channel index = (di * s + dj) * C + c
    order = (0, 1, 3, 2, 4, 5) if batched else (0, 2, 1, 3, 4)
    z = _moveaxes(z, order)
    return z.reshape(*lead, h // stride, w // stride, c * stride * stride)


def decode(z, stride: int = DEFAULT_STRIDE):
    """Exact inverse of encode. No clipping."""
    if z.ndim not in (3, 4):
        raise ShapeError(f"expected (H', W', C') or (B, H', W', C'), got {z.shape}")
    batched = z.ndim == 4
    hh, ww, cc = z.shape[-3], z.shape[-2], z.shape[-1]
    if cc % (stride * stride):
        raise ShapeError(f"latent channels {cc} not divisible by stride^2 = {stride * stride}")
    c = cc // (stride * stride)
    lead = z.shape[:1] if batched else ()
    x = z.reshape(*lead, hh, ww, stride, stride, c)
    order = (0, 1, 3, 2, 4, 5) if batched else (0, 2, 1, 3, 4)
    x = _moveaxes(x, order)
    return x.reshape(*lead, hh * stride, ww * stride, c)


def latent_shape(h: int, w: int, c: int, stride: int = DEFAULT_STRIDE) -> tuple[int, int, int]:
    if h % stride or w % stride:
        raise SizeError(f"dimensions {(h, w)} not divisible by stride {stride}")
    return h // stride, w // stride, c * stride * stride
