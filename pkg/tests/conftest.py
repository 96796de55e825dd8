import pytest

from gramsr.degrade import DegradationConfig
from gramsr.denoiser import DenoiserConfig
from gramsr.featenc import EncoderSpec
from gramsr.losses import NoiseSchedule
from gramsr.trainer import RunConfig, pretrain_base, train_stage


def tiny_run_config(seed=0, conditioning_mode="visual", **overrides) -> RunConfig:
    """Small, fast config used by unit tests (not the acceptance experiments)."""
    cfg = RunConfig(
        train_images=6,
        val_images=3,
        hq_size=32,
        scale_factor=4,
        corpus_seed=400 + seed,
        degradation=DegradationConfig(noise_sigma_range=(0.0, 0.03)),
        cond_encoder=EncoderSpec(role="conditioning", patch_size=4, depth=1, dim=32, seed=101),
        gram_encoder=EncoderSpec(role="gram", patch_size=8, depth=1, dim=16, seed=202),
        denoiser=DenoiserConfig(in_channels=48, widths=(16, 24, 32), cond_dim=32, num_tokens=4, t_embed_dim=16, seed=9),
        schedule=NoiseSchedule(steps=50),
        batch_size=4,
        pretrain_steps=40,
        stage1_steps=50,
        stage2_steps=30,
        stage3_steps=30,
        eval_interval=10,
        patience=3,
        seed=seed,
    )
    cfg.denoiser.conditioning_mode = conditioning_mode
    for key, val in overrides.items():
        setattr(cfg, key, val)
    return cfg.validate()


@pytest.fixture(scope="session")
def tiny_pipeline():
    """One fully trained tiny pipeline, shared across test modules."""
    cfg = tiny_run_config()
    ckpts = {0: pretrain_base(cfg)}
    for stage in (1, 2, 3):
        ckpts[stage] = train_stage(stage, ckpts[stage - 1], cfg)
    return cfg, ckpts
