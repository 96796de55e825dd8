from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gramsr import image
from gramsr.degrade import DegradationConfig, area_downscale, degrade, make_pair
from gramsr.errors import SizeError

GOLDEN_DIR = Path(__file__).parent / "golden"


def identity_cfg():
    return DegradationConfig(
        blur_sigma_range=(0.0, 0.0),
        noise_sigma_range=(0.0, 0.0),
        compression_quality_range=(95, 95),
    )


def test_config_validation():
    with pytest.raises(ValueError):
        DegradationConfig(noise_sigma_range=(0.0, 0.5))
    with pytest.raises(ValueError):
        DegradationConfig(compression_quality_range=(5, 95))
    with pytest.raises(ValueError):
        DegradationConfig(downscale_factor=1)
    with pytest.raises(ValueError):
        DegradationConfig(blur_sigma_range=(2.0, 1.0))


def test_config_round_trip():
    cfg = DegradationConfig(blur_sigma_range=(0.1, 1.5), noise_sigma_range=(0.0, 0.1))
    assert DegradationConfig.from_dict(cfg.to_dict()) == cfg


def test_degenerate_config_is_pure_downsample():
    rng = np.random.default_rng(0)
    hq = rng.random((32, 32, 3))
    lq = degrade(hq, identity_cfg(), seed=5)
    assert np.array_equal(lq, area_downscale(hq, 4))


def test_determinism():
    rng = np.random.default_rng(1)
    hq = rng.random((32, 32, 3))
    cfg = DegradationConfig()
    assert np.array_equal(degrade(hq, cfg, seed=9), degrade(hq, cfg, seed=9))


def test_constant_image_survives():
    hq = np.full((64, 64, 3), 0.37)
    cfg = DegradationConfig(noise_sigma_range=(0.0, 0.0), blur_sigma_range=(0.5, 2.0))
    lq = degrade(hq, cfg, seed=3)
    assert np.allclose(lq, 0.37, atol=1e-6)


def test_pair_shapes():
    rng = np.random.default_rng(2)
    hq = rng.random((64, 64, 3))
    lq, hq_out = make_pair(hq, DegradationConfig(), seed=0)
    assert lq.shape == (16, 16, 3)
    assert hq_out is hq


def test_pair_identity_degeneration():
    rng = np.random.default_rng(3)
    hq = rng.random((64, 64, 3))
    lq, _ = make_pair(hq, identity_cfg(), seed=0)
    assert np.array_equal(lq, area_downscale(hq, 4))


def test_indivisible_dimensions():
    with pytest.raises(SizeError):
        degrade(np.zeros((30, 32, 3)), DegradationConfig(), seed=0)


def test_golden_seeded_run():
    # Golden frozen from one recorded run; guards against drift in the pipeline.
    golden = np.load(GOLDEN_DIR / "degrade_seed3.npz")
    hq = golden["hq"]
    lq = degrade(hq, DegradationConfig(), seed=3)
    assert np.allclose(lq, golden["lq"], atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_output_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    hq = rng.random((16, 16, 3))
    cfg = DegradationConfig(blur_sigma_range=(0.0, 3.0), noise_sigma_range=(0.0, 0.2), compression_quality_range=(10, 95))
    lq = degrade(hq, cfg, seed=seed)
    assert lq.shape == (4, 4, 3)
    assert lq.min() >= 0.0 and lq.max() <= 1.0


def test_noise_monotonically_corrupts():
    rng = np.random.default_rng(7)
    hq = rng.random((64, 64, 3))
    uppers = [0.0, 0.05, 0.1, 0.2]
    means = []
    for upper in uppers:
        cfg = DegradationConfig(noise_sigma_range=(0.0, upper))
        vals = []
        for seed in range(32):
            lq = degrade(hq, cfg, seed=seed)
            vals.append(image.psnr(image.upsample_bicubic(lq, 4), hq))
        means.append(np.mean(vals))
    assert all(a >= b for a, b in zip(means, means[1:]))
