"""HTTP render service: novel views of a loaded checkpoint on demand.

The model is immutable once loaded, so any number of concurrent requests
may render; identical requests produce identical bytes. Render wall time
and the field-query count travel in response headers so clients can show
latency without touching the body.
"""

from __future__ import annotations

import io as _io
import logging
import time

import numpy as np
from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from .io import load_checkpoint
from .render import Camera, RenderConfig, render_image

log = logging.getLogger("gridfield.service")

DEFAULT_PIXEL_CAP = 512 * 512
DEFAULT_FOV_DEG = 60.0
ORBIT_RADIUS_SCALE = 2.2  # of the half-diagonal; keeps the box inside a 60 deg frustum


class QualityOverrides(BaseModel):
    k: int | None = Field(default=None, ge=1)
    epsilon: float | None = Field(default=None, ge=0.0, lt=1.0)


class RenderRequest(BaseModel):
    """One view: camera-to-world pose (16 floats, row-major), image size,
    focal scale relative to the default intrinsics, optional quality."""

    pose: list[float] = Field(min_length=16, max_length=16)
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    focal_scale: float = Field(default=1.0, gt=0.0)
    quality: QualityOverrides | None = None


def _default_intrinsics(aabb, width: int = 512, height: int = 512) -> dict:
    half_diag = 0.5 * aabb.diagonal
    focal = 0.5 * width / np.tan(np.radians(DEFAULT_FOV_DEG / 2.0))
    return {
        "width": width,
        "height": height,
        "fx": float(focal),
        "fy": float(focal),
        "cx": width / 2.0,
        "cy": height / 2.0,
        "suggested_radius": float(ORBIT_RADIUS_SCALE * half_diag),
    }


def create_app(
    checkpoint_path: str | None,
    seed: int = 0,
    workers: int = 1,
    pixel_cap: int = DEFAULT_PIXEL_CAP,
    render_cfg: RenderConfig | None = None,
) -> FastAPI:
    app = FastAPI(title="gridfield render service")
    state = {"grid": None, "occ": None, "cfg": render_cfg or RenderConfig()}
    if checkpoint_path is not None:
        grid, occ = load_checkpoint(checkpoint_path)
        state["grid"], state["occ"] = grid, occ
        log.info("loaded checkpoint %s (%s cells)", checkpoint_path, grid.n_cells)

    @app.get("/meta")
    def meta():
        grid = state["grid"]
        if grid is None:
            return JSONResponse({"error": "no model loaded"}, status_code=503)
        intr = _default_intrinsics(grid.aabb)
        return {
            "aabb": {"b_min": list(grid.aabb.b_min), "b_max": list(grid.aabb.b_max)},
            "grid_resolution": [int(v) for v in grid.resolution],
            "suggested_radius": intr.pop("suggested_radius"),
            "default_intrinsics": intr,
        }

    @app.post("/render")
    def render(req: RenderRequest):
        grid = state["grid"]
        if grid is None:
            return JSONResponse({"error": "no model loaded"}, status_code=503)
        if req.width * req.height > pixel_cap:
            return JSONResponse(
                {"error": f"width*height exceeds cap of {pixel_cap} pixels"}, status_code=400
            )
        intr = _default_intrinsics(grid.aabb, req.width, req.height)
        try:
            cam = Camera(
                width=req.width,
                height=req.height,
                fx=intr["fx"] * req.focal_scale,
                fy=intr["fy"] * req.focal_scale,
                cx=intr["cx"],
                cy=intr["cy"],
                c2w=np.array(req.pose, dtype=np.float64).reshape(4, 4),
            )
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        cfg = state["cfg"]
        if req.quality is not None:
            overrides = {k: v for k, v in req.quality.model_dump().items() if v is not None}
            cfg = cfg.replace(**overrides)
        t0 = time.perf_counter()
        img, stats = render_image(grid, state["occ"], cam, cfg, seed=seed, workers=workers)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        buf = _io.BytesIO()
        arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
        return Response(
            content=buf.getvalue(),
            media_type="image/png",
            headers={
                "X-Render-Millis": f"{wall_ms:.3f}",
                "X-Queries": str(stats.total_queries),
            },
        )

    return app
