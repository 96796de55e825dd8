import numpy as np
import pytest
import torch

from gramsr import codec, guidance
from gramsr.denoiser import LoRAActivation
from gramsr.errors import ConfigurationError
from gramsr.guidance import GuidanceScales, compose_epsilon, compute_deltas, forward_ladder, infer, sweep
from gramsr.image import upsample_bicubic
from gramsr.trainer import build_dataset, clone_checkpoint, pretrain_base, train_stage

from conftest import tiny_run_config


@pytest.fixture(scope="module")
def trained(tiny_pipeline):
    cfg, ckpts = tiny_pipeline
    bundle = build_dataset(cfg, "val")
    lq = bundle.lq_images[0]
    z, cond = _encode_input(ckpts[3], lq)
    return cfg, ckpts, lq, bundle.hq_images[0], z, cond


def _encode_input(ckpt, lq):
    stride = ckpt.config.scale_factor
    x_up = upsample_bicubic(lq, stride)
    z = codec.encode(torch.from_numpy(x_up).to(ckpt.denoiser.config.torch_dtype()), stride=stride)
    return z, guidance.conditioning_tokens(ckpt, lq)


def untrained_stage3(tiny_pipeline):
    _, ckpts = tiny_pipeline
    ckpt = clone_checkpoint(ckpts[0])
    for name in ("pix", "sem", "gram"):
        ckpt.denoiser.inject_lora(name)
    ckpt.stage = 3
    return ckpt


def test_untrained_deltas_residual(tiny_pipeline):
    ckpt = untrained_stage3(tiny_pipeline)
    rng = np.random.default_rng(0)
    lq = rng.random((8, 8, 3))
    z, cond = _encode_input(ckpt, lq)
    d_pix, d_sem, d_gram = compute_deltas(z, cond, ckpt, mode="residual")
    for d in (d_pix, d_sem, d_gram):
        assert torch.all(d == 0)


def test_untrained_deltas_literal(tiny_pipeline):
    ckpt = untrained_stage3(tiny_pipeline)
    rng = np.random.default_rng(1)
    lq = rng.random((8, 8, 3))
    z, cond = _encode_input(ckpt, lq)
    with torch.no_grad():
        eps0 = ckpt.denoiser.predict(z, cond, act=LoRAActivation.none())
    d_pix, d_sem, d_gram = compute_deltas(z, cond, ckpt, mode="literal")
    assert torch.equal(d_pix, eps0)
    assert torch.all(d_sem == 0) and torch.all(d_gram == 0)


def test_deltas_require_stage3(tiny_pipeline):
    _, ckpts = tiny_pipeline
    rng = np.random.default_rng(2)
    z, cond = _encode_input(ckpts[2], rng.random((8, 8, 3)))
    with pytest.raises(ConfigurationError):
        compute_deltas(z, cond, ckpts[2], mode="residual")
    with pytest.raises(ConfigurationError):
        compute_deltas(z, cond, ckpts[2], mode="bogus")


def test_deltas_match_recomputed_passes(trained):
    _, ckpts, lq, _, z, cond = trained
    ckpt = ckpts[3]
    deltas = compute_deltas(z, cond, ckpt, mode="residual")
    e0, ep, es, eg = forward_ladder(ckpt, z, cond)
    assert torch.equal(deltas[0], ep - e0)
    assert torch.equal(deltas[1], es - ep)
    assert torch.equal(deltas[2], eg - es)


# --- compose_epsilon exactness -------------------------------------------------


def test_residual_unit_scales_telescopes_exactly(trained):
    _, ckpts, _, _, z, cond = trained
    passes = forward_ladder(ckpts[3], z, cond)
    eps = compose_epsilon(passes, GuidanceScales(1.0, 1.0, 1.0), mode="residual")
    assert torch.equal(eps, passes[3])


def test_literal_unit_scales_base_plus_texture(trained):
    _, ckpts, _, _, z, cond = trained
    passes = forward_ladder(ckpts[3], z, cond)
    eps = compose_epsilon(passes, GuidanceScales(1.0, 1.0, 1.0), mode="literal")
    assert torch.equal(eps, passes[0] + passes[3])


def test_zero_scales_base_only_both_modes(trained):
    _, ckpts, _, _, z, cond = trained
    passes = forward_ladder(ckpts[3], z, cond)
    for mode in ("literal", "residual"):
        eps = compose_epsilon(passes, GuidanceScales(0.0, 0.0, 0.0), mode=mode)
        assert torch.equal(eps, passes[0])


def test_zero_scale_isolation_exact(trained):
    _, ckpts, _, _, z, cond = trained
    ckpt = ckpts[3]
    passes = forward_ladder(ckpt, z, cond)
    deltas = compute_deltas(z, cond, ckpt, mode="residual")
    lam = 0.7
    for i in range(3):
        scales = [0.0, 0.0, 0.0]
        scales[i] = lam
        eps = compose_epsilon(passes, GuidanceScales(*scales), mode="residual")
        assert torch.equal(eps, passes[0] + lam * deltas[i])


def test_halving_gram_scale_halves_contribution_exactly(trained):
    _, ckpts, _, _, z, cond = trained
    passes = forward_ladder(ckpts[3], z, cond)
    d_gram = passes[3] - passes[2]
    lam = 0.9
    eps_full = compose_epsilon(passes, GuidanceScales(1.0, 1.0, lam), mode="residual")
    eps_half = compose_epsilon(passes, GuidanceScales(1.0, 1.0, lam / 2), mode="residual")
    # prefix collapses to eps_sem exactly; contribution term scales exactly by 0.5
    assert torch.equal(eps_full, passes[2] + lam * d_gram)
    assert torch.equal(eps_half, passes[2] + (lam / 2) * d_gram)
    assert torch.equal((lam / 2) * d_gram, 0.5 * (lam * d_gram))


# --- infer ---------------------------------------------------------------------


def test_infer_zero_scales_is_base_restoration(trained):
    cfg, ckpts, lq, _, z, cond = trained
    ckpt = ckpts[3]
    out = infer(lq, GuidanceScales(0.0, 0.0, 0.0), "residual", ckpt)
    with torch.no_grad():
        eps0 = ckpt.denoiser.predict(z, cond, act=LoRAActivation.none())
    expected = np.clip(codec.decode(z - eps0, stride=cfg.scale_factor).numpy().astype(np.float64), 0, 1)
    assert np.array_equal(out, expected)


def test_infer_unit_residual_equals_full_model(trained):
    cfg, ckpts, lq, _, z, cond = trained
    ckpt = ckpts[3]
    out = infer(lq, GuidanceScales(1.0, 1.0, 1.0), "residual", ckpt)
    with torch.no_grad():
        eps_full = ckpt.denoiser.predict(z, cond, act=LoRAActivation(pix=True, sem=True, gram=True))
    expected = np.clip(codec.decode(z - eps_full, stride=cfg.scale_factor).numpy().astype(np.float64), 0, 1)
    assert np.array_equal(out, expected)


def test_infer_unit_literal_is_base_plus_texture(trained):
    cfg, ckpts, lq, _, z, cond = trained
    ckpt = ckpts[3]
    out = infer(lq, GuidanceScales(1.0, 1.0, 1.0), "literal", ckpt)
    e0, _, _, eg = forward_ladder(ckpt, z, cond)
    expected = np.clip(codec.decode(z - (e0 + eg), stride=cfg.scale_factor).numpy().astype(np.float64), 0, 1)
    assert np.array_equal(out, expected)


def test_infer_requires_stage3(tiny_pipeline):
    _, ckpts = tiny_pipeline
    rng = np.random.default_rng(3)
    with pytest.raises(ConfigurationError):
        infer(rng.random((8, 8, 3)), GuidanceScales(), "residual", ckpts[2])


def test_infer_output_shape_and_range(trained):
    cfg, ckpts, lq, _, _, _ = trained
    out = infer(lq, GuidanceScales(), "residual", ckpts[3])
    assert out.shape == (lq.shape[0] * 4, lq.shape[1] * 4, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0


# --- sweep ------------------------------------------------------------------------


def test_sweep_single_point_matches_direct(trained):
    cfg, ckpts, lq, hq, _, _ = trained
    ckpt = ckpts[3]
    report = sweep(lq, [GuidanceScales(1.0, 1.0, 0.5)], "residual", ckpt, gt=hq)
    assert len(report.rows) == 1
    sr = infer(lq, GuidanceScales(1.0, 1.0, 0.5), "residual", ckpt)
    direct = guidance.score_pair(sr, hq, cfg)
    assert report.rows[0].report.psnr == direct.psnr
    assert report.rows[0].report.auxiliary == direct.auxiliary


def test_sweep_duplicate_rows_identical(trained):
    cfg, ckpts, lq, hq, _, _ = trained
    grid = [GuidanceScales(1, 1, 1), GuidanceScales(1, 1, 1)]
    report = sweep(lq, grid, "residual", ckpts[3], gt=hq)
    assert report.rows[0].report.to_dict() == report.rows[1].report.to_dict()


def test_sweep_table3_grid_shape(trained):
    cfg, ckpts, lq, hq, _, _ = trained
    grid = [GuidanceScales(1.0, 1.0, g) for g in (0.25, 0.5, 0.75, 1.0)]
    report = sweep(lq, grid, "residual", ckpts[3], gt=hq)
    csv_text = report.to_csv()
    lines = csv_text.strip().split("\n")
    assert lines[0] == "lambda_pix,lambda_sem,lambda_gram,psnr,ssim,gram_distance,perceptual"
    assert len(lines) == 5
    assert [float(l.split(",")[2]) for l in lines[1:]] == [0.25, 0.5, 0.75, 1.0]


def test_sweep_empty_grid(trained):
    _, ckpts, lq, _, _, _ = trained
    with pytest.raises(ConfigurationError):
        sweep(lq, [], "residual", ckpts[3])


def test_sweep_without_gt_uses_upsampled_reference(trained):
    _, ckpts, lq, _, _, _ = trained
    report = sweep(lq, [GuidanceScales()], "residual", ckpts[3])
    row = report.rows[0]
    assert np.isnan(row.report.psnr) and np.isnan(row.report.ssim)
    assert np.isfinite(row.report.auxiliary["gram_distance"])
