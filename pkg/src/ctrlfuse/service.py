"""HTTP fusion service: POST /v1/fuse plus health and model metadata.

One checkpoint per process, loaded at startup; handlers only read the
model, so concurrent requests are safe and responses are a pure function
of (checkpoint, request).
"""

from __future__ import annotations

import binascii
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import metrics
from .backbone import luminance
from .checkpoint import load_model
from .imgio import (b64_png, decode_png, encode_gray_png, png_from_b64)
from .tensor import ShapeError, Tensor


class ApiError(Exception):
    def __init__(self, status, code, message):
        self.status = status
        self.code = code
        self.message = message


def _decode_image(body, key, kind):
    if key not in body:
        raise ApiError(400, "missing_field", f"missing field {key!r}")
    try:
        data = png_from_b64(body[key])
    except (binascii.Error, ValueError):
        raise ApiError(400, "bad_base64", f"{key} is not valid base64")
    try:
        arr, got = decode_png(data)
    except Exception:
        raise ApiError(400, "bad_png", f"{key} is not a decodable PNG")
    if kind == "gray" and got != "gray":
        arr = arr.mean(axis=0, keepdims=True)
    if kind == "rgb" and got != "rgb":
        arr = np.repeat(arr, 3, axis=0)
    return arr


def create_app(ckpt_path=None) -> FastAPI:
    app = FastAPI(title="ctrlfuse")
    state = {"model": None, "ckpt": str(ckpt_path) if ckpt_path else None}

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.code,
                                     "message": exc.message})

    def load(path):
        model, _ = load_model(path)
        state["model"] = model
        state["ckpt"] = str(path)

    if ckpt_path is not None:
        load(ckpt_path)

    app.state.load_checkpoint = load

    @app.get("/v1/health")
    async def health():
        return {"status": "ok" if state["model"] is not None else "loading"}

    @app.get("/v1/model")
    async def model_info():
        if state["model"] is None:
            raise ApiError(503, "loading", "model not loaded yet")
        return {"checkpoint": state["ckpt"],
                "config": state["model"].config.as_dict()}

    @app.post("/v1/fuse")
    async def fuse(request: Request):
        if state["model"] is None:
            raise ApiError(503, "loading", "model not loaded yet")
        model = state["model"]
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "bad_json", "request body is not JSON")
        if not isinstance(body, dict):
            raise ApiError(400, "bad_json", "request body must be an object")
        if body.get("checkpoint") not in (None, state["ckpt"]):
            raise ApiError(404, "unknown_checkpoint",
                           "this process serves a single checkpoint")
        ir = _decode_image(body, "ir", "gray")
        vis = _decode_image(body, "vis", "rgb")
        if ir.shape[1:] != vis.shape[1:]:
            raise ApiError(400, "size_mismatch", "ir and vis sizes differ")
        if ir.shape[1] % 4 or ir.shape[2] % 4:
            raise ApiError(400, "bad_size", "H and W must be divisible by 4")
        alpha = body.get("alpha", 1.0)
        if not isinstance(alpha, (int, float)) or alpha < 0:
            raise ApiError(400, "bad_alpha", "alpha must be >= 0")
        mask = None
        if body.get("mask") is not None:
            m = _decode_image(body, "mask", "gray")
            if m.shape[1:] != ir.shape[1:]:
                raise ApiError(400, "size_mismatch",
                               "mask size differs from the images")
            mask = Tensor((m[0] >= 0.5).astype(np.float64))

        t0 = time.perf_counter()
        try:
            out = model.forward(Tensor(ir), Tensor(vis), mask,
                                alpha=float(alpha))
        except ShapeError as exc:
            raise ApiError(400, "shape_error", str(exc))
        elapsed_ms = (time.perf_counter() - t0) * 1000.0

        fused = out.i_fused.data
        vis_y = luminance(Tensor(vis)).data[0]
        resp = {
            "fused": b64_png(encode_gray_png(fused)),
            "m_ir": (b64_png(encode_gray_png(out.m_ir.data))
                     if out.m_ir is not None else None),
            "m_vis": (b64_png(encode_gray_png(out.m_vis.data))
                      if out.m_vis is not None else None),
            "seg": (b64_png(encode_gray_png(out.i_seg.data))
                    if out.i_seg is not None else None),
            "metrics": metrics.metric_report(fused[0], ir[0], vis_y),
            "timing_ms": elapsed_ms,
            "alpha": float(alpha),
        }
        return resp

    return app
