"""FastAPI app implementing the audit wire protocol (version "X-VA-Proto: 1").

  GET  /health    capability echo, truthful about timestep support and sigma_max
  POST /generate  seeded, deterministic PNG; 422 for unsupported parameters
  POST /dcs       server-side one-step denoising residual; latents stay here

Responses: 400 malformed request, 422 unsupported parameter, 503 when the
bounded queue is full.  Generation work is serialized per device.
"""

from __future__ import annotations

import io
import math
import threading

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from va_adapter.config import AdapterConfig
from va_adapter.models import ModelBackend, UnknownPromptError, create_model

PROTOCOL_HEADER = "X-VA-Proto"
PROTOCOL_VERSION = "1"


class GenerateRequest(BaseModel):
    caption: str
    seed: int = Field(ge=0)
    timesteps: int | None = Field(default=None, ge=1)
    width: int | None = Field(default=None, ge=8)
    height: int | None = Field(default=None, ge=8)


class DcsRequest(BaseModel):
    caption: str
    noise_seed: int = Field(ge=0)
    sigma: float


def _png_bytes(raster: np.ndarray) -> bytes:
    from verbatim_audit.imaging import Image, save_image

    buf = io.BytesIO()
    save_image(Image(raster), buf)
    return buf.getvalue()


def create_app(cfg: AdapterConfig, model: ModelBackend | None = None) -> FastAPI:
    app = FastAPI(title="va-diffusion-adapter", docs_url=None, redoc_url=None)
    backend = model if model is not None else create_model(cfg)
    info = backend.info

    slots = threading.BoundedSemaphore(cfg.max_concurrent + cfg.queue_depth)
    work_lock = threading.Lock()  # serializes model work per device
    app.state.slots = slots

    @app.middleware("http")
    async def version_header(request: Request, call_next):
        response = await call_next(request)
        response.headers[PROTOCOL_HEADER] = PROTOCOL_VERSION
        return response

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": f"malformed request: {exc.errors()[:2]}"})

    def busy_guard():
        if not slots.acquire(blocking=False):
            return JSONResponse(status_code=503, content={"error": "busy: queue full"})
        return None

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model": info.name,
            "sigma_max": info.sigma_max,
            "default_timesteps": info.default_timesteps,
            "supports_timesteps": info.supports_timesteps,
            "max_resolution": info.resolution,
            "dcs_space": info.dcs_space,
            "guidance_scale": cfg.guidance_scale,
        }

    @app.post("/generate")
    def generate(req: GenerateRequest):
        busy = busy_guard()
        if busy is not None:
            return busy
        try:
            timesteps = req.timesteps if req.timesteps is not None else info.default_timesteps
            if timesteps != info.default_timesteps and not info.supports_timesteps:
                return JSONResponse(status_code=422, content={"error": "timesteps control unsupported"})
            width = req.width or info.resolution
            height = req.height or info.resolution
            if width != info.resolution or height != info.resolution:
                return JSONResponse(
                    status_code=422,
                    content={"error": f"only {info.resolution}x{info.resolution} supported"},
                )
            try:
                with work_lock:
                    raster = backend.generate(req.caption, req.seed, timesteps)
            except UnknownPromptError as exc:
                return JSONResponse(status_code=400, content={"error": str(exc)})
            return Response(content=_png_bytes(raster), media_type="image/png")
        finally:
            slots.release()

    @app.post("/dcs")
    def dcs(req: DcsRequest):
        busy = busy_guard()
        if busy is not None:
            return busy
        try:
            if not math.isfinite(req.sigma) or req.sigma <= 0:
                return JSONResponse(status_code=400, content={"error": "sigma must be finite and > 0"})
            if req.sigma > info.sigma_max:
                return JSONResponse(
                    status_code=400, content={"error": f"sigma exceeds sigma_max {info.sigma_max}"}
                )
            try:
                with work_lock:
                    value = backend.denoise_residual(req.caption, req.noise_seed, req.sigma)
            except UnknownPromptError as exc:
                return JSONResponse(status_code=400, content={"error": str(exc)})
            except ValueError as exc:
                return JSONResponse(status_code=400, content={"error": str(exc)})
            if not math.isfinite(value):
                return JSONResponse(status_code=400, content={"error": "non-finite residual"})
            return {"dcs": value}
        finally:
            slots.release()

    return app
