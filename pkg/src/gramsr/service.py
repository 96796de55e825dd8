"""HTTP inference service: guidance-controlled restoration over JSON + base64 PNG.

Endpoints: POST /api/infer, GET /api/health, GET /api/model. The loaded
checkpoint is an immutable snapshot; request handling never mutates it, so
concurrent requests are safe and identical requests produce identical bytes.
"""
from __future__ import annotations

import base64
import binascii
import math
import time

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import guidance
from .errors import FormatError, GramSRError
from .image import decode_png, encode_png

DEFAULT_PORT = 8731


class InferRequest(BaseModel):
    image: str = Field(description="base64-encoded PNG of the LQ input")
    lambda_pix: float = 1.0
    lambda_sem: float = 1.0
    lambda_gram: float = 1.0
    mode: str = "residual"


class InferResponse(BaseModel):
    image: str
    timings_ms: float
    scales: dict
    mode: str


def run_infer(ckpt, req: InferRequest) -> InferResponse:
    for v in (req.lambda_pix, req.lambda_sem, req.lambda_gram):
        if not math.isfinite(v):
            raise HTTPException(status_code=400, detail="guidance scales must be finite")
    if req.mode not in guidance.MODES:
        raise HTTPException(status_code=400, detail=f"unknown mode {req.mode!r}")
    try:
        raw = base64.b64decode(req.image, validate=True)
        lq = decode_png(raw)
    except (binascii.Error, ValueError, FormatError) as exc:
        raise HTTPException(status_code=400, detail=f"invalid image payload: {exc}") from exc
    scales = guidance.GuidanceScales(req.lambda_pix, req.lambda_sem, req.lambda_gram)
    start = time.monotonic()
    try:
        sr = guidance.infer(lq, scales, req.mode, ckpt)
    except GramSRError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    elapsed = (time.monotonic() - start) * 1000.0
    return InferResponse(
        image=base64.b64encode(encode_png(sr)).decode("ascii"),
        timings_ms=elapsed,
        scales=scales.to_dict(),
        mode=req.mode,
    )


def create_app(ckpt) -> FastAPI:
    app = FastAPI(title="gramsr inference service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    started = time.monotonic()

    @app.post("/api/infer", response_model=InferResponse)
    def infer_endpoint(req: InferRequest) -> InferResponse:
        return run_infer(ckpt, req)

    @app.get("/api/health")
    def health() -> dict:
        return {
            "stage": ckpt.stage,
            "codec_stride": ckpt.config.scale_factor,
            "encoder_seeds": {
                "conditioning": ckpt.config.cond_encoder.seed,
                "gram": ckpt.config.gram_encoder.seed,
            },
            "uptime_seconds": time.monotonic() - started,
        }

    @app.get("/api/model")
    def model() -> dict:
        return ckpt.config.to_dict()

    return app


def serve(ckpt, port: int = DEFAULT_PORT, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(ckpt), host=host, port=port, log_level="info")
