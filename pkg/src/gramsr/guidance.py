"""Triple-guidance one-step inference and guidance-scale sweeps.

Four forward passes (activations {}, {pix}, {pix,sem}, {pix,sem,gram}) give
the per-stage predictions; the composed epsilon is their scale-weighted
combination. Composition is exact-path aware: zero scales skip their term
outright and unit scales collapse telescoping delta chains onto the
corresponding full forward pass, so that the algebraic identities of the
scheme (all-zero = base pass, all-unit = full pass / base + full) hold
bit-exactly rather than to rounding error.

Two delta conventions are shipped. `residual` (default) defines the first
delta against the base pass, so unit scales reproduce the fully trained
model. `literal` uses the printed case form where the pix delta IS the
pix-stage prediction, so unit scales give base + texture-stage prediction.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import torch

from . import codec
from .denoiser import LoRAActivation
from .errors import ConfigurationError
from .featenc import adapt, extract_features
from .image import MetricReport, psnr as psnr_fn, rgb_to_luminance, ssim as ssim_fn, upsample_bicubic, validate_image
from .losses import gram_loss, perceptual_loss

MODES = ("literal", "residual")

ACTIVATION_LADDER = (
    LoRAActivation(),
    LoRAActivation(pix=True),
    LoRAActivation(pix=True, sem=True),
    LoRAActivation(pix=True, sem=True, gram=True),
)


@dataclass
class GuidanceScales:
    lambda_pix: float = 1.0
    lambda_sem: float = 1.0
    lambda_gram: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise ValueError(f"guidance scales must be finite, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (float(self.lambda_pix), float(self.lambda_sem), float(self.lambda_gram))

    def to_dict(self) -> dict:
        return {"lambda_pix": self.lambda_pix, "lambda_sem": self.lambda_sem, "lambda_gram": self.lambda_gram}


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ConfigurationError(f"unknown guidance mode {mode!r}")
    return mode


def forward_ladder(ckpt, z, cond) -> list[torch.Tensor]:
    """The four stage predictions eps_0, eps_pix, eps_sem, eps_gram (no grad)."""
    with torch.no_grad():
        return [ckpt.denoiser.predict(z, cond, act=act) for act in ACTIVATION_LADDER]


def compute_deltas(z, cond, ckpt, mode: str = "residual"):
    """Per-stage guidance deltas from four forward passes.

    literal: (eps_pix, eps_sem - eps_pix, eps_gram - eps_sem)
    residual: (eps_pix - eps_0, eps_sem - eps_pix, eps_gram - eps_sem)
    """
    _check_mode(mode)
    if ckpt.stage != 3:
        raise ConfigurationError(f"guidance deltas need a stage-3 checkpoint, got stage {ckpt.stage}")
    e0, ep, es, eg = forward_ladder(ckpt, z, cond)
    d_pix = ep if mode == "literal" else ep - e0
    return d_pix, es - ep, eg - es


def compose_epsilon(passes, scales: GuidanceScales, mode: str = "residual"):
    """Scale-weighted epsilon from the four ladder passes, exact-path aware."""
    _check_mode(mode)
    e0, ep, es, eg = passes
    fulls = [e0, ep, es, eg]
    lams = scales.as_tuple()

    if mode == "residual":
        acc, sym = e0, 0
        for level in (1, 2, 3):
            lam = lams[level - 1]
            if lam == 0.0:
                continue
            if lam == 1.0 and sym == level - 1:
                acc, sym = fulls[level], level
            else:
                acc = acc + lam * (fulls[level] - fulls[level - 1])
                sym = -1
        return acc

    chain, chain_sym = None, 0
    for level in (1, 2, 3):
        lam = lams[level - 1]
        if lam == 0.0:
            continue
        delta = fulls[1] if level == 1 else fulls[level] - fulls[level - 1]
        if lam == 1.0 and chain_sym == level - 1:
            chain, chain_sym = fulls[level], level
        else:
            chain = lam * delta if chain is None else chain + lam * delta
            chain_sym = -1
    return e0 if chain is None else e0 + chain


def conditioning_tokens(ckpt, lq: np.ndarray):
    """Adapter-projected frozen features of the LQ input (visual mode only)."""
    if ckpt.config.denoiser.conditioning_mode != "visual":
        return None
    feats = extract_features(torch.from_numpy(np.ascontiguousarray(lq)), ckpt.config.cond_encoder)
    return adapt(feats, ckpt.adapter)


def infer(x_l: np.ndarray, scales: GuidanceScales, mode: str, ckpt) -> np.ndarray:
    """Upsample, encode, compose guided epsilon, decode, clip to [0, 1]."""
    _check_mode(mode)
    if ckpt.stage != 3:
        raise ConfigurationError(f"guided inference needs a stage-3 checkpoint, got stage {ckpt.stage}")
    validate_image(x_l)
    stride = ckpt.config.scale_factor
    x_up = upsample_bicubic(x_l, stride)
    dtype = ckpt.denoiser.config.torch_dtype()
    z_l = codec.encode(torch.from_numpy(x_up).to(dtype), stride=stride)
    cond = conditioning_tokens(ckpt, x_l)
    passes = forward_ladder(ckpt, z_l, cond)
    eps = compose_epsilon(passes, scales, mode)
    x = codec.decode(z_l - eps, stride=stride)
    return np.clip(x.numpy().astype(np.float64), 0.0, 1.0)


@dataclass
class SweepRow:
    scales: GuidanceScales
    report: MetricReport


@dataclass
class SweepReport:
    mode: str
    rows: list[SweepRow]

    CSV_HEADER = ("lambda_pix", "lambda_sem", "lambda_gram", "psnr", "ssim", "gram_distance", "perceptual")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for row in self.rows:
            lp, ls, lg = row.scales.as_tuple()
            aux = row.report.auxiliary
            w.writerow([lp, ls, lg, row.report.psnr, row.report.ssim, aux.get("gram_distance"), aux.get("perceptual")])
        return buf.getvalue()


def score_pair(sr: np.ndarray, ref: np.ndarray, cfg, include_fidelity: bool = True) -> MetricReport:
    """PSNR/SSIM on luminance plus gram/perceptual surrogates against ref."""
    aux = {
        "gram_distance": float(gram_loss(sr, ref, cfg.gram_encoder, cfg.gram_norm_mode)),
        "perceptual": float(perceptual_loss(sr, ref, cfg.cond_encoder, cfg.perceptual_layers)),
    }
    if include_fidelity:
        ya, yb = rgb_to_luminance(sr), rgb_to_luminance(ref)
        return MetricReport(psnr=psnr_fn(ya, yb), ssim=ssim_fn(ya, yb), auxiliary=aux)
    return MetricReport(psnr=float("nan"), ssim=float("nan"), auxiliary=aux)


def sweep(x_l: np.ndarray, grid, mode: str, ckpt, gt: np.ndarray | None = None) -> SweepReport:
    """One inference + metric row per grid point.

    Metrics are scored against gt when given; otherwise PSNR/SSIM are NaN and
    the gram/perceptual columns measure texture deviation from the bicubically
    upsampled input.
    """
    grid = list(grid)
    if not grid:
        raise ConfigurationError("sweep needs a non-empty scale grid")
    reference = gt if gt is not None else upsample_bicubic(x_l, ckpt.config.scale_factor)
    rows = []
    for scales in grid:
        sr = infer(x_l, scales, mode, ckpt)
        rows.append(SweepRow(scales=scales, report=score_pair(sr, reference, ckpt.config, include_fidelity=gt is not None)))
    return SweepReport(mode=mode, rows=rows)
