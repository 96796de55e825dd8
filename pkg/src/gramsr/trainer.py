"""Stage-0 base pretraining plus the three-stage adapter schedule.

Stage 0 trains the base denoiser as a plain noise-prediction model on HQ
latents (teacher for the CSD surrogate), then freezes it. Stages 1-3 train
the pix / sem / gram adapter sets sequentially with the stage-appropriate
composite objective; earlier stages' parameters stay bit-frozen. Stage 3
early-stops on a texture-statistics validation metric (gram distance +
perceptual surrogate) and retains the best-seen state.

Checkpoints are a single binary container: magic, little-endian u32 manifest
length, canonical JSON manifest, then raw little-endian tensor blocks in
manifest order. Save/load round-trips are byte-stable.
"""
from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import codec, guidance
from .corpus import build_corpus
from .degrade import DegradationConfig, make_pair
from .denoiser import Denoiser, DenoiserConfig, LoRAActivation, LORA_SET_NAMES
from .errors import ConfigurationError, CorruptionError, DataError
from .featenc import AdapterParams, EncoderSpec, adapt, default_conditioning_spec, default_gram_spec, extract_features
from .image import MetricReport, psnr as psnr_fn, rgb_to_luminance, ssim as ssim_fn, upsample_bicubic
from .losses import LossWeights, NoiseSchedule, csd_loss_gradient, csd_surrogate, gram_loss, mse_loss, perceptual_loss

CHECKPOINT_MAGIC = b"GSRCKPT1"


@dataclass
class RunConfig:
    train_images: int = 16
    val_images: int = 8
    hq_size: int = 64
    scale_factor: int = 4
    corpus_seed: int = 1234
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    cond_encoder: EncoderSpec = field(default_factory=default_conditioning_spec)
    gram_encoder: EncoderSpec = field(default_factory=default_gram_spec)
    # per_row keeps the texture term at a magnitude where the default
    # lambda4 = 500 actually balances it against the other objectives at
    # this model scale; the literal global norm leaves it ~1e3x too small.
    gram_norm_mode: str = "per_row"
    perceptual_layers: tuple[int, ...] | None = None
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    lora_rank: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    batch_size: int = 16
    pretrain_steps: int = 300
    pretrain_lr: float = 1e-3
    stage1_steps: int = 500
    stage2_steps: int = 250
    stage3_steps: int = 300
    stage12_lr: float = 5e-5
    stage3_lr: float = 5e-6
    eval_interval: int = 30
    patience: int = 4
    cond_dropout: float = 0.1
    guidance_mode: str = "residual"
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.hq_size % self.scale_factor:
            raise ConfigurationError(f"hq_size {self.hq_size} not divisible by scale_factor {self.scale_factor}")
        lq = self.hq_size // self.scale_factor
        if self.denoiser.in_channels != 3 * self.scale_factor**2:
            raise ConfigurationError(
                f"denoiser in_channels {self.denoiser.in_channels} != 3 * {self.scale_factor}^2"
            )
        if lq % self.cond_encoder.patch_size:
            raise ConfigurationError(f"LQ size {lq} not divisible by conditioning patch {self.cond_encoder.patch_size}")
        if self.denoiser.num_tokens != (lq // self.cond_encoder.patch_size) ** 2:
            raise ConfigurationError("denoiser num_tokens must match the conditioning patch grid")
        if self.hq_size % self.gram_encoder.patch_size:
            raise ConfigurationError(f"hq_size {self.hq_size} not divisible by gram patch {self.gram_encoder.patch_size}")
        if self.cond_encoder.seed == self.gram_encoder.seed or self.cond_encoder.dim == self.gram_encoder.dim:
            raise ConfigurationError("conditioning and gram encoders need distinct seeds and dims")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if min(self.pretrain_lr, self.stage12_lr, self.stage3_lr) <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.guidance_mode not in guidance.MODES:
            raise ConfigurationError(f"unknown guidance_mode {self.guidance_mode!r}")
        return self

    def stage_steps(self, stage: int) -> int:
        return {1: self.stage1_steps, 2: self.stage2_steps, 3: self.stage3_steps}[stage]

    def to_dict(self) -> dict:
        return {
            "train_images": self.train_images,
            "val_images": self.val_images,
            "hq_size": self.hq_size,
            "scale_factor": self.scale_factor,
            "corpus_seed": self.corpus_seed,
            "degradation": self.degradation.to_dict(),
            "cond_encoder": self.cond_encoder.to_dict(),
            "gram_encoder": self.gram_encoder.to_dict(),
            "gram_norm_mode": self.gram_norm_mode,
            "perceptual_layers": list(self.perceptual_layers) if self.perceptual_layers is not None else None,
            "denoiser": self.denoiser.to_dict(),
            "lora_rank": self.lora_rank,
            "weights": self.weights.to_dict(),
            "schedule": self.schedule.to_dict(),
            "batch_size": self.batch_size,
            "pretrain_steps": self.pretrain_steps,
            "pretrain_lr": self.pretrain_lr,
            "stage1_steps": self.stage1_steps,
            "stage2_steps": self.stage2_steps,
            "stage3_steps": self.stage3_steps,
            "stage12_lr": self.stage12_lr,
            "stage3_lr": self.stage3_lr,
            "eval_interval": self.eval_interval,
            "patience": self.patience,
            "cond_dropout": self.cond_dropout,
            "guidance_mode": self.guidance_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            train_images=int(d["train_images"]),
            val_images=int(d["val_images"]),
            hq_size=int(d["hq_size"]),
            scale_factor=int(d["scale_factor"]),
            corpus_seed=int(d["corpus_seed"]),
            degradation=DegradationConfig.from_dict(d["degradation"]),
            cond_encoder=EncoderSpec.from_dict(d["cond_encoder"]),
            gram_encoder=EncoderSpec.from_dict(d["gram_encoder"]),
            gram_norm_mode=d["gram_norm_mode"],
            perceptual_layers=tuple(d["perceptual_layers"]) if d.get("perceptual_layers") is not None else None,
            denoiser=DenoiserConfig.from_dict(d["denoiser"]),
            lora_rank=int(d["lora_rank"]),
            weights=LossWeights.from_dict(d["weights"]),
            schedule=NoiseSchedule.from_dict(d["schedule"]),
            batch_size=int(d["batch_size"]),
            pretrain_steps=int(d["pretrain_steps"]),
            pretrain_lr=d["pretrain_lr"],
            stage1_steps=int(d["stage1_steps"]),
            stage2_steps=int(d["stage2_steps"]),
            stage3_steps=int(d["stage3_steps"]),
            stage12_lr=d["stage12_lr"],
            stage3_lr=d["stage3_lr"],
            eval_interval=int(d["eval_interval"]),
            patience=int(d["patience"]),
            cond_dropout=d["cond_dropout"],
            guidance_mode=d["guidance_mode"],
            seed=int(d["seed"]),
        )

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Checkpoint:
    stage: int
    step: int
    config: RunConfig
    denoiser: Denoiser
    adapter: AdapterParams
    validation_history: list[dict] = field(default_factory=list)


# --- parameter bookkeeping ------------------------------------------------------


def _all_tensors(ckpt: Checkpoint) -> dict[str, torch.Tensor]:
    out = dict(ckpt.denoiser.base_tensors())
    for name in sorted(ckpt.denoiser.lora_sets):
        out.update(ckpt.denoiser.lora_sets[name].tensors())
    out.update(ckpt.adapter.tensors())
    out.update(ckpt.denoiser.conditioning_tensors())
    return out


def parameter_group_bytes(ckpt: Checkpoint) -> dict[str, bytes]:
    """Concatenated little-endian bytes per parameter group, for freeze audits."""
    groups: dict[str, list[tuple[str, torch.Tensor]]] = {"base": [], "pix": [], "sem": [], "gram": [], "conditioning": []}
    for name, t in _all_tensors(ckpt).items():
        if name.startswith("base."):
            groups["base"].append((name, t))
        elif name.startswith("lora."):
            groups[name.split(".")[1]].append((name, t))
        else:
            groups["conditioning"].append((name, t))
    return {
        g: b"".join(t.detach().numpy().astype(t.detach().numpy().dtype.newbyteorder("<")).tobytes() for _, t in sorted(pairs))
        for g, pairs in groups.items()
    }


def clone_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    den = Denoiser(ckpt.denoiser.config)
    with torch.no_grad():
        for name, t in den.base_tensors().items():
            t.copy_(ckpt.denoiser.base_tensors()[name])
        for set_name, ps in ckpt.denoiser.lora_sets.items():
            new_ps = den.inject_lora(set_name, rank=ps.rank, targets=list(ps.pairs))
            new_ps.scaling = ps.scaling
            new_ps.active = ps.active
            for target, (a, b) in ps.pairs.items():
                new_ps.pairs[target][0].copy_(a)
                new_ps.pairs[target][1].copy_(b)
        if ckpt.denoiser.cond_tensor is not None:
            den.cond_tensor.copy_(ckpt.denoiser.cond_tensor)
    den.base_frozen = ckpt.denoiser.base_frozen
    if den.base_frozen:
        den.set_base_trainable(False)
    adapter = AdapterParams(
        w1=ckpt.adapter.w1.detach().clone(),
        b1=ckpt.adapter.b1.detach().clone(),
        w2=ckpt.adapter.w2.detach().clone(),
        b2=ckpt.adapter.b2.detach().clone(),
        trainable=ckpt.adapter.trainable,
    )
    return Checkpoint(
        stage=ckpt.stage,
        step=ckpt.step,
        config=copy.deepcopy(ckpt.config),
        denoiser=den,
        adapter=adapter,
        validation_history=[dict(h) for h in ckpt.validation_history],
    )


# --- checkpoint serialization ----------------------------------------------------


def _dtype_tag(t: torch.Tensor) -> str:
    return {torch.float32: "<f4", torch.float64: "<f8"}[t.dtype]


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    tensors = _all_tensors(ckpt)
    entries = []
    blocks = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name].detach()
        raw = t.numpy().astype(np.dtype(_dtype_tag(t)), copy=False).tobytes()
        entries.append({"name": name, "dtype": _dtype_tag(t), "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blocks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": 1,
        "stage": ckpt.stage,
        "step": ckpt.step,
        "base_frozen": ckpt.denoiser.base_frozen,
        "config": ckpt.config.to_dict(),
        "validation_history": ckpt.validation_history,
        "lora_sets": {
            name: {"rank": ps.rank, "scaling": ps.scaling, "active": ps.active, "targets": sorted(ps.pairs)}
            for name, ps in sorted(ckpt.denoiser.lora_sets.items())
        },
        "tensors": entries,
    }
    mjson = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<I", len(mjson)) + mjson + b"".join(blocks)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def checkpoint_from_bytes(data: bytes, expected_stride: int | None = None) -> Checkpoint:
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptionError("bad checkpoint magic")
    pos = len(CHECKPOINT_MAGIC)
    (mlen,) = struct.unpack("<I", data[pos : pos + 4])
    pos += 4
    try:
        manifest = json.loads(data[pos : pos + mlen])
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"unreadable manifest: {exc}") from exc
    pos += mlen
    cfg = RunConfig.from_dict(manifest["config"])
    if expected_stride is not None and cfg.scale_factor != expected_stride:
        raise ConfigurationError(f"checkpoint stride {cfg.scale_factor} != expected {expected_stride}")

    den = Denoiser(cfg.denoiser)
    for name, meta in sorted(manifest["lora_sets"].items()):
        ps = den.inject_lora(name, rank=int(meta["rank"]), targets=list(meta["targets"]))
        ps.scaling = float(meta["scaling"])
        ps.active = bool(meta.get("active", False))
    adapter = AdapterParams.initialize(cfg.cond_encoder.dim, cfg.denoiser.cond_dim, seed=cfg.seed + 11, dtype=cfg.denoiser.torch_dtype())
    ckpt = Checkpoint(
        stage=int(manifest["stage"]),
        step=int(manifest["step"]),
        config=cfg,
        denoiser=den,
        adapter=adapter,
        validation_history=list(manifest["validation_history"]),
    )
    expected = _all_tensors(ckpt)
    names = [e["name"] for e in manifest["tensors"]]
    if sorted(names) != sorted(expected):
        raise CorruptionError("tensor manifest does not match the architecture manifest")
    body = data[pos:]
    cursor = 0
    with torch.no_grad():
        for e in manifest["tensors"]:
            t = expected[e["name"]]
            shape = tuple(e["shape"])
            dt = np.dtype(e["dtype"])
            if shape != tuple(t.shape):
                raise CorruptionError(f"shape mismatch for {e['name']}: manifest {shape} vs model {tuple(t.shape)}")
            if e["dtype"] != _dtype_tag(t):
                raise CorruptionError(f"dtype mismatch for {e['name']}")
            if e["nbytes"] != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
                raise CorruptionError(f"byte count mismatch for {e['name']}")
            if e["offset"] != cursor:
                raise CorruptionError(f"non-contiguous block for {e['name']}")
            raw = body[cursor : cursor + e["nbytes"]]
            if len(raw) != e["nbytes"]:
                raise CorruptionError("truncated checkpoint body")
            cursor += e["nbytes"]
            t.copy_(torch.from_numpy(np.frombuffer(raw, dtype=dt).reshape(shape).copy()))
    if cursor != len(body):
        raise CorruptionError("trailing bytes after tensor blocks")
    if bool(manifest.get("base_frozen")):
        den.freeze_base()
    return ckpt


def load_checkpoint(path, expected_stride: int | None = None) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes(), expected_stride=expected_stride)


# --- data -------------------------------------------------------------------------


@dataclass
class DataBundle:
    lq_images: list[np.ndarray]
    hq_images: list[np.ndarray]
    z_l: torch.Tensor
    z_h: torch.Tensor
    cond_feats: torch.Tensor
    hq: torch.Tensor

    def __len__(self) -> int:
        return len(self.lq_images)


def build_dataset(cfg: RunConfig, split: str = "train") -> DataBundle:
    count = cfg.train_images if split == "train" else cfg.val_images
    if count < 1:
        raise DataError(f"{split} corpus is empty")
    seed_base = cfg.corpus_seed if split == "train" else cfg.corpus_seed + 7_777_777
    hq_images = build_corpus(count, cfg.hq_size, seed_base)
    pairs = [make_pair(hq, cfg.degradation, seed=seed_base + 31 * i) for i, hq in enumerate(hq_images)]
    dtype = cfg.denoiser.torch_dtype()
    lq_images = [lq for lq, _ in pairs]
    ups = np.stack([upsample_bicubic(lq, cfg.scale_factor) for lq in lq_images])
    z_l = codec.encode(torch.from_numpy(ups).to(dtype), stride=cfg.scale_factor)
    z_h = codec.encode(torch.from_numpy(np.stack(hq_images)).to(dtype), stride=cfg.scale_factor)
    feats = extract_features(torch.from_numpy(np.stack(lq_images)), cfg.cond_encoder).to(dtype)
    hq_t = torch.from_numpy(np.stack(hq_images)).to(dtype)
    return DataBundle(lq_images=lq_images, hq_images=hq_images, z_l=z_l, z_h=z_h, cond_feats=feats, hq=hq_t)


# --- stage activations --------------------------------------------------------------


def stage_activation(stage: int) -> LoRAActivation:
    return {
        0: LoRAActivation(),
        1: LoRAActivation(pix=True),
        2: LoRAActivation(pix=True, sem=True),
        3: LoRAActivation(pix=True, sem=True, gram=True),
    }[stage]


def _tokens_for(den: Denoiser, adapter: AdapterParams, feats: torch.Tensor):
    if den.config.conditioning_mode != "visual":
        return None
    return adapt(feats, adapter)


# --- training -----------------------------------------------------------------------


def pretrain_base(cfg: RunConfig) -> Checkpoint:
    """Noise-prediction pretraining of the base denoiser on HQ latents."""
    cfg.validate()
    torch.set_num_threads(1)
    data = build_dataset(cfg, "train")
    den = Denoiser(cfg.denoiser)
    adapter = AdapterParams.initialize(cfg.cond_encoder.dim, cfg.denoiser.cond_dim, seed=cfg.seed + 11, dtype=cfg.denoiser.torch_dtype())
    den.set_stage_trainability(0, adapter)
    params = [t for _, t in sorted(den.base_tensors().items())]
    opt = torch.optim.Adam(params, lr=cfg.pretrain_lr)
    rng = np.random.default_rng(cfg.seed + 17)
    dtype = cfg.denoiser.torch_dtype()
    ab = torch.from_numpy(cfg.schedule.alpha_bar).to(dtype)
    history = []
    n = len(data)
    for step in range(cfg.pretrain_steps):
        idx = rng.integers(0, n, cfg.batch_size)
        z_h = data.z_h[idx]
        t = torch.from_numpy(rng.integers(0, cfg.schedule.steps, cfg.batch_size))
        noise = torch.from_numpy(rng.standard_normal(z_h.shape)).to(dtype)
        ab_t = ab[t][:, None, None, None]
        z_t = torch.sqrt(ab_t) * z_h + torch.sqrt(1.0 - ab_t) * noise
        tokens = _tokens_for(den, adapter, data.cond_feats[idx])
        if tokens is not None and cfg.cond_dropout > 0:
            keep = torch.from_numpy((rng.random(cfg.batch_size) >= cfg.cond_dropout).astype(np.float64)).to(dtype)
            tokens = tokens * keep[:, None, None]
        eps_hat = den.predict(z_t, tokens, act=(), t=t)
        loss = mse_loss(eps_hat, noise)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"stage": 0, "step": step + 1, "loss": float(loss.detach())})
    den.freeze_base()
    return Checkpoint(stage=0, step=cfg.pretrain_steps, config=copy.deepcopy(cfg), denoiser=den, adapter=adapter, validation_history=history)


def _early_stop_metric(ckpt: Checkpoint, val: DataBundle) -> float:
    """Stage-3 validation target: texture statistics (gram + perceptual composite).

    The two surrogates are combined at their loss weights so the texture term
    is not drowned out by the (much larger raw) perceptual term.
    """
    scales = guidance.GuidanceScales()
    w = ckpt.config.weights
    total = 0.0
    for lq, hq in zip(val.lq_images, val.hq_images):
        sr = restore(ckpt, lq, scales=scales)
        total += w.lambda4 * float(gram_loss(sr, hq, ckpt.config.gram_encoder, ckpt.config.gram_norm_mode))
        total += w.lambda2 * float(perceptual_loss(sr, hq, ckpt.config.cond_encoder, ckpt.config.perceptual_layers))
    return total / len(val)


def train_stage(stage: int, ckpt: Checkpoint, cfg: RunConfig) -> Checkpoint:
    """Train one adapter stage; returns a new checkpoint with stage advanced."""
    if stage not in (1, 2, 3):
        raise ConfigurationError(f"train_stage handles stages 1-3, got {stage}")
    if ckpt.stage != stage - 1:
        raise ConfigurationError(f"stage {stage} requires a stage-{stage - 1} checkpoint, got stage {ckpt.stage}")
    cfg.validate()
    if not ckpt.denoiser.base_frozen:
        raise ConfigurationError("base denoiser must be pretrained and frozen before adapter stages")
    torch.set_num_threads(1)
    work = clone_checkpoint(ckpt)
    work.config = copy.deepcopy(cfg)
    den, adapter = work.denoiser, work.adapter
    if stage == 1:
        for name in LORA_SET_NAMES:
            if name not in den.lora_sets:
                den.inject_lora(name, rank=cfg.lora_rank)
    den.set_stage_trainability(stage, adapter)

    trainable: dict[str, torch.Tensor] = {}
    for name, t in _all_tensors(work).items():
        if t.requires_grad:
            trainable[name] = t
    params = [trainable[n] for n in sorted(trainable)]
    lr = cfg.stage12_lr if stage in (1, 2) else cfg.stage3_lr
    opt = torch.optim.Adam(params, lr=lr)

    data = build_dataset(cfg, "train")
    val = build_dataset(cfg, "val") if stage == 3 else None
    act = stage_activation(stage)
    w = cfg.weights
    rng = np.random.default_rng(cfg.seed + 1009 * stage)
    n = len(data)
    history = []
    best_metric = math.inf
    best_state: dict[str, torch.Tensor] | None = None
    bad_evals = 0
    steps_run = 0

    for step in range(1, cfg.stage_steps(stage) + 1):
        idx = rng.integers(0, n, cfg.batch_size)
        z_l = data.z_l[idx]
        hq = data.hq[idx]
        tokens = _tokens_for(den, adapter, data.cond_feats[idx])
        eps = den.predict(z_l, tokens, act=act)
        z_pred = z_l - eps
        x_pred = codec.decode(z_pred, stride=cfg.scale_factor)
        terms = {"mse": mse_loss(x_pred, hq)}
        total = w.lambda1 * terms["mse"]
        if stage >= 2:
            terms["perceptual"] = perceptual_loss(x_pred, hq, cfg.cond_encoder, cfg.perceptual_layers)
            grad = csd_loss_gradient(z_pred, None if tokens is None else tokens.detach(), cfg.schedule, seed=cfg.seed + 59999 * stage + step, base_denoiser=den)
            terms["csd"] = csd_surrogate(z_pred, grad)
            total = total + w.lambda2 * terms["perceptual"] + w.lambda3 * terms["csd"]
        if stage == 3:
            terms["gram"] = gram_loss(x_pred, hq, cfg.gram_encoder, cfg.gram_norm_mode)
            total = total + w.lambda4 * terms["gram"]
        opt.zero_grad()
        total.backward()
        opt.step()
        steps_run = step

        if stage == 3 and (step % cfg.eval_interval == 0 or step == cfg.stage_steps(stage)):
            work.stage = 3
            metric = _early_stop_metric(work, val)
            work.stage = stage - 1
            history.append({"stage": stage, "step": step, "val_metric": metric})
            if metric < best_metric:
                best_metric = metric
                best_state = {name: t.detach().clone() for name, t in trainable.items()}
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= cfg.patience:
                    break

    if stage == 3 and best_state is not None:
        with torch.no_grad():
            for name, t in trainable.items():
                t.copy_(best_state[name])
        history.append({"stage": stage, "step": steps_run, "val_metric": best_metric, "restored_best": True})

    work.stage = stage
    work.step = steps_run
    work.validation_history = ckpt.validation_history + history
    return work


# --- inference / validation ----------------------------------------------------------


def restore(ckpt: Checkpoint, lq: np.ndarray, scales: guidance.GuidanceScales | None = None, mode: str | None = None) -> np.ndarray:
    """SR restoration appropriate to the checkpoint's stage.

    Stage-3 checkpoints run triple-guidance inference; earlier stages run the
    monotone-prefix activation for their stage directly.
    """
    mode = mode or ckpt.config.guidance_mode
    if ckpt.stage == 3:
        return guidance.infer(lq, scales or guidance.GuidanceScales(), mode, ckpt)
    stride = ckpt.config.scale_factor
    x_up = upsample_bicubic(lq, stride)
    z_l = codec.encode(torch.from_numpy(x_up).to(ckpt.denoiser.config.torch_dtype()), stride=stride)
    cond = guidance.conditioning_tokens(ckpt, lq)
    with torch.no_grad():
        eps = ckpt.denoiser.predict(z_l, cond, act=stage_activation(ckpt.stage))
    x = codec.decode(z_l - eps, stride=stride)
    return np.clip(x.numpy().astype(np.float64), 0.0, 1.0)


def validate(ckpt: Checkpoint, val_set=None, scales: guidance.GuidanceScales | None = None, restore_fn=None) -> MetricReport:
    """Average PSNR/SSIM (luminance) and texture surrogates over the val set.

    restore_fn(lq, hq) -> sr overrides the restoration path (diagnostics).
    """
    if val_set is None:
        bundle = build_dataset(ckpt.config, "val")
        val_set = list(zip(bundle.lq_images, bundle.hq_images))
    val_set = list(val_set)
    if not val_set:
        raise DataError("validation set is empty")
    cfg = ckpt.config
    psnrs, ssims, grams, percs = [], [], [], []
    for lq, hq in val_set:
        sr = restore_fn(lq, hq) if restore_fn is not None else restore(ckpt, lq, scales=scales)
        ya, yb = rgb_to_luminance(sr), rgb_to_luminance(hq)
        psnrs.append(psnr_fn(ya, yb))
        ssims.append(ssim_fn(ya, yb))
        grams.append(float(gram_loss(sr, hq, cfg.gram_encoder, cfg.gram_norm_mode)))
        percs.append(float(perceptual_loss(sr, hq, cfg.cond_encoder, cfg.perceptual_layers)))
    return MetricReport(
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        auxiliary={"gram_distance": float(np.mean(grams)), "perceptual": float(np.mean(percs))},
    )
