"""One-step guided super-resolution: visual conditioning, staged low-rank
adapters, Gram-matrix texture alignment, and triple-guidance inference."""

from .degrade import DegradationConfig, degrade, make_pair
from .denoiser import Denoiser, DenoiserConfig, LoRAActivation, LoRAParamSet
from .featenc import AdapterParams, EncoderSpec, adapt, extract_features, gram, gram_distance
from .guidance import GuidanceScales, compute_deltas, infer, sweep
from .image import MetricReport, load_image, psnr, rgb_to_luminance, save_image, ssim
from .losses import LossWeights, NoiseSchedule, composite_loss, gram_loss, mse_loss, perceptual_loss
from .trainer import Checkpoint, RunConfig, load_checkpoint, pretrain_base, save_checkpoint, train_stage, validate

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "Checkpoint",
    "DegradationConfig",
    "Denoiser",
    "DenoiserConfig",
    "EncoderSpec",
    "GuidanceScales",
    "LoRAActivation",
    "LoRAParamSet",
    "LossWeights",
    "MetricReport",
    "NoiseSchedule",
    "RunConfig",
    "adapt",
    "composite_loss",
    "compute_deltas",
    "degrade",
    "extract_features",
    "gram",
    "gram_distance",
    "gram_loss",
    "infer",
    "load_checkpoint",
    "load_image",
    "make_pair",
    "mse_loss",
    "perceptual_loss",
    "pretrain_base",
    "psnr",
    "rgb_to_luminance",
    "save_checkpoint",
    "save_image",
    "ssim",
    "sweep",
    "train_stage",
    "validate",
]
