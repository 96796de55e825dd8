"""Training objectives: pixel MSE, perceptual surrogate, CSD surrogate, Gram loss.

The perceptual surrogate is a frozen-encoder feature distance (standing in for
LPIPS); the CSD surrogate injects the classifier direction of a frozen,
pretrained base denoiser (conditional minus unconditional epsilon at a random
noise level) directly as a gradient on the predicted latent, without
backpropagating through the teacher. Losses keep the autograd graph for torch
inputs and return plain floats for numpy inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, ShapeError
from .featenc import EncoderSpec, get_encoder, gram, gram_distance

STAGE_TERMS = {1: ("mse",), 2: ("mse", "perceptual", "csd"), 3: ("mse", "perceptual", "csd", "gram")}


@dataclass
class LossWeights:
    lambda1: float = 1.0  # MSE
    lambda2: float = 2.0  # perceptual
    lambda3: float = 1.0  # CSD
    lambda4: float = 500.0  # gram

    def __post_init__(self):
        vals = (self.lambda1, self.lambda2, self.lambda3, self.lambda4)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError(f"loss weights must be finite and >= 0, got {vals}")

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "lambda3": self.lambda3, "lambda4": self.lambda4}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(lambda1=d["lambda1"], lambda2=d["lambda2"], lambda3=d["lambda3"], lambda4=d["lambda4"])

    def for_term(self, term: str) -> float:
        return {"mse": self.lambda1, "perceptual": self.lambda2, "csd": self.lambda3, "gram": self.lambda4}[term]


@dataclass
class NoiseSchedule:
    """Linear-beta diffusion schedule used only by the teacher pathway."""

    steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def __post_init__(self):
        self.beta = np.linspace(self.beta_start, self.beta_end, self.steps)
        if not np.all((self.beta > 0) & (self.beta < 1)):
            raise ValueError("betas must lie in (0, 1)")
        self.alpha_bar = np.cumprod(1.0 - self.beta)
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    def to_dict(self) -> dict:
        return {"steps": self.steps, "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(steps=int(d["steps"]), beta_start=d["beta_start"], beta_end=d["beta_end"])


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    if isinstance(pred, np.ndarray):
        return float(np.mean((pred - np.asarray(target)) ** 2))
    diff = pred - target
    return (diff * diff).mean()


def perceptual_loss(pred, target, spec: EncoderSpec, layers: tuple[int, ...] | None = None):
    """Mean squared frozen-feature distance, averaged over encoder blocks."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    is_numpy = isinstance(pred, np.ndarray)
    enc = get_encoder(spec)
    ta = torch.from_numpy(np.ascontiguousarray(pred)) if is_numpy else pred
    tb = torch.from_numpy(np.ascontiguousarray(target)) if is_numpy else target
    squeeze = ta.ndim == 3
    if squeeze:
        ta, tb = ta[None], tb[None]
    _, layers_a = enc.forward(ta, collect_layers=True)
    _, layers_b = enc.forward(tb, collect_layers=True)
    idx = tuple(range(len(layers_a))) if layers is None else layers
    total = sum(((layers_a[i] - layers_b[i]) ** 2).mean() for i in idx) / len(idx)
    return float(total) if is_numpy else total


def csd_loss_gradient(z_pred, cond, schedule: NoiseSchedule, seed: int, base_denoiser):
    """Classifier direction of the frozen base at a seeded random noise level.

    Returns a gradient tensor shaped like z_pred (w(t) = 1); callers inject it
    via a dot-product surrogate. Zero when cond is the null conditioning.
    """
    if base_denoiser is None or not base_denoiser.base_frozen:
        raise ConfigurationError("CSD requires a frozen pretrained base denoiser")
    is_numpy = isinstance(z_pred, np.ndarray)
    z = torch.from_numpy(np.ascontiguousarray(z_pred)) if is_numpy else z_pred.detach()
    g = torch.Generator().manual_seed(seed)
    t = int(torch.randint(0, schedule.steps, (1,), generator=g))
    ab = float(schedule.alpha_bar[t])
    noise = torch.randn(z.shape, generator=g, dtype=z.dtype)
    z_t = math.sqrt(ab) * z + math.sqrt(1.0 - ab) * noise
    with torch.no_grad():
        eps_c = base_denoiser.predict(z_t, cond, act=(), t=t)
        eps_u = base_denoiser.predict(z_t, None, act=(), t=t)
        grad = eps_c - eps_u
    return grad.numpy() if is_numpy else grad


def csd_surrogate(z_pred: torch.Tensor, grad: torch.Tensor):
    """Scalar whose z_pred-gradient is grad / numel (per-element convention)."""
    return (grad.detach() * z_pred).mean()


def gram_loss(x_pred, x_gt, spec: EncoderSpec, norm_mode: str = "global_frobenius"):
    """Gram-matrix discrepancy between frozen texture features of two images."""
    if x_pred.shape != x_gt.shape:
        raise ShapeError(f"shape mismatch {x_pred.shape} vs {x_gt.shape}")
    is_numpy = isinstance(x_pred, np.ndarray)
    enc = get_encoder(spec)
    ta = torch.from_numpy(np.ascontiguousarray(x_pred)) if is_numpy else x_pred
    tb = torch.from_numpy(np.ascontiguousarray(x_gt)) if is_numpy else x_gt
    fa = enc.forward(ta[None] if ta.ndim == 3 else ta)
    fb = enc.forward(tb[None] if tb.ndim == 3 else tb)
    total = 0
    for i in range(fa.shape[0]):
        total = total + gram_distance(gram(fa[i], norm_mode), gram(fb[i], norm_mode))
    total = total / fa.shape[0]
    return float(total) if is_numpy else total


def composite_loss(stage: int, terms: dict[str, float], weights: LossWeights) -> float:
    """Weighted sum of the stage-appropriate raw terms (CSD enters by its surrogate value)."""
    if stage not in STAGE_TERMS:
        raise ConfigurationError(f"unknown training stage {stage}")
    required = STAGE_TERMS[stage]
    missing = [t for t in required if t not in terms]
    if missing:
        raise ConfigurationError(f"stage {stage} requires loss terms {missing}")
    return float(sum(weights.for_term(t) * terms[t] for t in required))
