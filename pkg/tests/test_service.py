import base64
import concurrent.futures
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gramsr import guidance
from gramsr.image import decode_png, encode_png, load_image, save_image
from gramsr.service import create_app
from gramsr.trainer import save_checkpoint
from gramsr.cli import main as cli_main


@pytest.fixture(scope="module")
def client_and_ckpt(tiny_pipeline):
    _, ckpts = tiny_pipeline
    app = create_app(ckpts[3])
    return TestClient(app), ckpts[3]


def lq_png_b64(seed=0, size=8):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (size, size, 3), dtype=np.uint8) / 255.0
    return base64.b64encode(encode_png(img)).decode(), img


def test_infer_round_trip_shape(client_and_ckpt):
    client, _ = client_and_ckpt
    b64, _ = lq_png_b64(size=8)
    resp = client.post("/api/infer", json={"image": b64, "lambda_pix": 1, "lambda_sem": 1, "lambda_gram": 1, "mode": "residual"})
    assert resp.status_code == 200
    body = resp.json()
    out = decode_png(base64.b64decode(body["image"]))
    assert out.shape == (32, 32, 3)
    assert body["scales"] == {"lambda_pix": 1.0, "lambda_sem": 1.0, "lambda_gram": 1.0}
    assert body["timings_ms"] >= 0


def test_infer_matches_direct_call(client_and_ckpt):
    client, ckpt = client_and_ckpt
    b64, img = lq_png_b64(seed=1)
    resp = client.post("/api/infer", json={"image": b64, "lambda_pix": 0, "lambda_sem": 0, "lambda_gram": 0, "mode": "residual"})
    direct = guidance.infer(img, guidance.GuidanceScales(0, 0, 0), "residual", ckpt)
    served = decode_png(base64.b64decode(resp.json()["image"]))
    assert np.array_equal(served, np.round(direct * 255) / 255)


def test_infer_malformed_base64(client_and_ckpt):
    client, _ = client_and_ckpt
    resp = client.post("/api/infer", json={"image": "!!!not-base64!!!", "mode": "residual"})
    assert resp.status_code == 400


def test_infer_invalid_png(client_and_ckpt):
    client, _ = client_and_ckpt
    resp = client.post("/api/infer", json={"image": base64.b64encode(b"junkjunk").decode(), "mode": "residual"})
    assert resp.status_code == 400


def test_infer_bad_mode(client_and_ckpt):
    client, _ = client_and_ckpt
    b64, _ = lq_png_b64()
    assert client.post("/api/infer", json={"image": b64, "mode": "sideways"}).status_code == 400


def test_concurrent_requests_identical(client_and_ckpt):
    client, _ = client_and_ckpt
    b64, _ = lq_png_b64(seed=2)
    payload = {"image": b64, "lambda_pix": 1, "lambda_sem": 1, "lambda_gram": 0.5, "mode": "residual"}

    def call():
        return client.post("/api/infer", json=payload).json()["image"]

    with concurrent.futures.ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(lambda _: call(), range(4)))
    assert all(r == results[0] for r in results)


def test_health_document(client_and_ckpt):
    client, ckpt = client_and_ckpt
    doc = client.get("/api/health").json()
    assert doc["stage"] == 3
    assert doc["codec_stride"] == ckpt.config.scale_factor
    assert doc["encoder_seeds"] == {"conditioning": ckpt.config.cond_encoder.seed, "gram": ckpt.config.gram_encoder.seed}
    assert doc["uptime_seconds"] >= 0


def test_health_stable_across_requests(client_and_ckpt):
    client, _ = client_and_ckpt
    first = client.get("/api/health").json()
    b64, _ = lq_png_b64(seed=3)
    client.post("/api/infer", json={"image": b64, "mode": "residual"})
    second = client.get("/api/health").json()
    assert first["encoder_seeds"] == second["encoder_seeds"]
    assert first["stage"] == second["stage"]


def test_model_endpoint_is_config_snapshot(client_and_ckpt):
    client, ckpt = client_and_ckpt
    assert client.get("/api/model").json() == json.loads(json.dumps(ckpt.config.to_dict()))


# --- CLI ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def stage_paths(tiny_pipeline, tmp_path_factory):
    _, ckpts = tiny_pipeline
    root = tmp_path_factory.mktemp("ckpts")
    paths = {}
    for stage, ckpt in ckpts.items():
        paths[stage] = root / f"stage{stage}.ckpt"
        save_checkpoint(ckpt, paths[stage])
    return paths


def test_cli_infer_writes_png(stage_paths, tmp_path):
    rng = np.random.default_rng(4)
    lq = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8) / 255.0
    lq_path = tmp_path / "lq.png"
    save_image(lq, lq_path)
    out_path = tmp_path / "sr.png"
    rc = cli_main([
        "infer", "--ckpt", str(stage_paths[3]), "--in", str(lq_path), "--out", str(out_path),
        "--lpix", "1", "--lsem", "1", "--lgram", "1",
    ])
    assert rc == 0
    assert load_image(out_path).shape == (32, 32, 3)


def test_cli_http_parity(client_and_ckpt, stage_paths, tmp_path):
    client, ckpt = client_and_ckpt
    rng = np.random.default_rng(5)
    lq = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8) / 255.0
    lq_path = tmp_path / "lq.png"
    save_image(lq, lq_path)
    out_path = tmp_path / "sr.png"
    assert cli_main(["infer", "--ckpt", str(stage_paths[3]), "--in", str(lq_path), "--out", str(out_path)]) == 0
    b64 = base64.b64encode(lq_path.read_bytes()).decode()
    resp = client.post("/api/infer", json={"image": b64, "lambda_pix": 1, "lambda_sem": 1, "lambda_gram": 1, "mode": "residual"})
    assert base64.b64decode(resp.json()["image"]) == out_path.read_bytes()


def test_cli_train_stage_order_error(stage_paths, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    from conftest import tiny_run_config

    tiny_run_config().save_json(cfg_path)
    rc = cli_main([
        "train", "--stage", "2", "--config", str(cfg_path),
        "--ckpt", str(stage_paths[0]), "--out", str(tmp_path / "x.ckpt"),
    ])
    assert rc == 1


def test_cli_sweep_csv(stage_paths, tmp_path):
    rng = np.random.default_rng(6)
    lq = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8) / 255.0
    hq = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8) / 255.0
    lq_path, hq_path = tmp_path / "lq.png", tmp_path / "hq.png"
    save_image(lq, lq_path)
    save_image(hq, hq_path)
    out = tmp_path / "sweep.csv"
    rc = cli_main([
        "sweep", "--ckpt", str(stage_paths[3]), "--in", str(lq_path), "--gt", str(hq_path), "--out", str(out),
    ])
    assert rc == 0
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 5
    assert lines[0].startswith("lambda_pix,lambda_sem,lambda_gram")


def test_cli_degrade_and_evaluate(stage_paths, tmp_path):
    from conftest import tiny_run_config

    cfg_path = tmp_path / "cfg.json"
    tiny_run_config().save_json(cfg_path)
    pairs_dir = tmp_path / "pairs"
    rc = cli_main(["degrade", "--config", str(cfg_path), "--out", str(pairs_dir), "--count", "2"])
    assert rc == 0
    assert len(list(pairs_dir.glob("*_lq.png"))) == 2
    rc = cli_main(["evaluate", "--ckpt", str(stage_paths[3]), "--data", str(pairs_dir)])
    assert rc == 0


def test_cli_unknown_subcommand_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli_main(["frobnicate"])
    assert exc.value.code == 2


def test_cli_missing_config(tmp_path, stage_paths, monkeypatch):
    monkeypatch.delenv("GRAMSR_CONFIG", raising=False)
    rc = cli_main(["pretrain", "--out", str(tmp_path / "x.ckpt")])
    assert rc == 2


def test_cli_config_env_fallback(tmp_path, monkeypatch):
    from conftest import tiny_run_config

    cfg_path = tmp_path / "cfg.json"
    tiny_run_config(pretrain_steps=2, train_images=2, val_images=1).save_json(cfg_path)
    monkeypatch.setenv("GRAMSR_CONFIG", str(cfg_path))
    out = tmp_path / "s0.ckpt"
    assert cli_main(["pretrain", "--out", str(out)]) == 0
    assert out.exists()
