"""JSON-over-HTTP service around a trained checkpoint; backend of the playground UI.

The model is loaded once at startup and never mutated. Inversion results and
mined directions are cached server-side under content-derived handles with LRU
eviction, so slider interactions re-decode cheaply without re-inverting.
Responses are deterministic functions of (checkpoint, request) on both cache
hits and misses because handles are content hashes.

Error surface: malformed requests yield 400 with field-level messages, unknown
handles 404, more in-flight requests than the configured limit 429.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .inference import AlignedModel
from .pngio import image_to_png_bytes, png_bytes_to_image
from .spaces import Direction, SBundle, WLatent

__all__ = ["ServiceConfig", "create_app", "http_serve"]

ENV_BIND = "LATALIGN_BIND"
ENV_CHECKPOINT = "LATALIGN_CHECKPOINT"


@dataclass(frozen=True)
class ServiceConfig:
    checkpoint_path: str
    bind: str = "127.0.0.1:8512"
    max_concurrent: int = 8
    request_timeout: float = 30.0  # advisory; enforced by the server runner
    latent_cache: int = 256
    direction_cache: int = 256

    def __post_init__(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.latent_cache < 1 or self.direction_cache < 1:
            raise ValueError("cache sizes must be >= 1")

    @classmethod
    def from_env(cls, checkpoint_path: str | None = None, bind: str | None = None):
        ckpt = checkpoint_path or os.environ.get(ENV_CHECKPOINT)
        if not ckpt:
            raise ValueError(f"no checkpoint path given and {ENV_CHECKPOINT} unset")
        return cls(
            checkpoint_path=ckpt,
            bind=bind or os.environ.get(ENV_BIND, "127.0.0.1:8512"),
        )


class _LruCache:
    """Tiny thread-safe LRU map; the only mutable state in the service."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data: OrderedDict[str, object] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: str):
        with self._lock:
            if key not in self._data:
                return None
            self._data.move_to_end(key)
            return self._data[key]

    def put(self, key: str, value) -> None:
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)


class GenerateRequest(BaseModel):
    text: str = Field(min_length=1)


class InvertRequest(BaseModel):
    image_b64: str = Field(min_length=1)


class DirectionRequest(BaseModel):
    src_text: str = Field(min_length=1)
    trg_text: str = Field(min_length=1)


class EditRequestBody(BaseModel):
    latent_id: str
    direction_id: str
    strength: float = 1.0
    layer_mask: list[int] | None = None


def _field_error(loc: list, msg: str) -> HTTPException:
    return HTTPException(status_code=400, detail={"error": "validation", "fields": [{"loc": loc, "msg": msg}]})


def create_app(config: ServiceConfig) -> FastAPI:
    model = AlignedModel.from_checkpoint(config.checkpoint_path)
    with open(config.checkpoint_path, "rb") as f:
        model_id = hashlib.blake2s(f.read(), digest_size=6).hexdigest()

    latents = _LruCache(config.latent_cache)
    directions = _LruCache(config.direction_cache)
    inflight = threading.BoundedSemaphore(config.max_concurrent)

    app = FastAPI(title="latalign service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.model = model
    app.state.inflight = inflight

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        fields = [
            {"loc": [str(x) for x in err["loc"]], "msg": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(
            status_code=400, content={"error": "validation", "fields": fields}
        )

    @app.middleware("http")
    async def _admission(request: Request, call_next):
        if not inflight.acquire(blocking=False):
            return JSONResponse(
                status_code=429, content={"error": "too many concurrent requests"}
            )
        try:
            return await call_next(request)
        finally:
            inflight.release()

    def _decode_image_b64(text: str):
        try:
            raw = base64.b64decode(text, validate=True)
            return raw, png_bytes_to_image(raw)
        except (binascii.Error, ValueError, OSError) as e:
            raise _field_error(["body", "image_b64"], f"invalid base64 PNG: {e}")

    def _b64(image) -> str:
        return base64.b64encode(image_to_png_bytes(image)).decode("ascii")

    @app.get("/health")
    def health():
        cfg = model.gen.config
        return {
            "status": "ok",
            "model_id": model_id,
            "n_layers": cfg.n_layers,
            "resolution": list(cfg.resolution),
            "layer_dims": list(cfg.dim_s),
        }

    @app.post("/generate")
    def generate(req: GenerateRequest):
        image = model.generate(req.text)
        return {"image_b64": _b64(image)}

    @app.post("/invert")
    def invert(req: InvertRequest):
        raw, image = _decode_image_b64(req.image_b64)
        expected = model.gen.config.resolution
        if (image.height, image.width) != expected:
            raise _field_error(
                ["body", "image_b64"],
                f"image is {image.height}x{image.width}, model expects {expected[0]}x{expected[1]}",
            )
        latent_id = hashlib.blake2s(raw, digest_size=12).hexdigest()
        w, s = model.invert(image)
        latents.put(latent_id, (w, s))
        recon = model.gen.synthesize_from_s(s)
        return {"latent_id": latent_id, "recon_b64": _b64(recon)}

    @app.post("/direction")
    def direction(req: DirectionRequest):
        key = hashlib.blake2s(
            f"{req.src_text}\x00{req.trg_text}".encode(), digest_size=12
        ).hexdigest()
        d = model.direction_from_texts(req.src_text, req.trg_text)
        directions.put(key, d)
        return {
            "direction_id": key,
            "delta_w_norm": float(d.delta_w.values.norm()),
            "per_layer_delta_s_norms": [float(l.norm()) for l in d.delta_s.layers],
        }

    @app.post("/edit")
    def edit(req: EditRequestBody):
        cached = latents.get(req.latent_id)
        if cached is None:
            raise HTTPException(
                status_code=404, detail={"error": f"unknown latent_id {req.latent_id!r}"}
            )
        d = directions.get(req.direction_id)
        if d is None:
            raise HTTPException(
                status_code=404,
                detail={"error": f"unknown direction_id {req.direction_id!r}"},
            )
        w, s = cached
        mask = None if req.layer_mask is None else frozenset(req.layer_mask)
        try:
            image = model.apply_direction(
                w, s, d, strength=req.strength, layer_mask=mask
            )
        except ValueError as e:
            raise _field_error(["body", "layer_mask"], str(e))
        return {"image_b64": _b64(image)}

    return app


def http_serve(config: ServiceConfig) -> None:
    """Blocking entrypoint: serve the app with uvicorn on the configured bind."""
    import uvicorn

    host, _, port = config.bind.rpartition(":")
    app = create_app(config)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
