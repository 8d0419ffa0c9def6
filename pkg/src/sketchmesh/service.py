"""HTTP inference service: loads one model bundle per class at startup and
serves automatic (predicted-view) or steered (specified-view) mesh generation
from base64 PNG sketches. Bundles are read-only; requests are stateless."""

from __future__ import annotations

import base64
import io
import logging
import threading
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field
from PIL import Image, UnidentifiedImageError

from .data import pad_to_square
from .geometry import Viewpoint, mesh_to_obj
from .networks import ModelBundle, run_inference

log = logging.getLogger(__name__)


class ViewpointDegrees(BaseModel):
    elevation_deg: float
    azimuth_deg: float


class InferenceRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    sketch: str = Field(description="base64-encoded PNG, grayscale sketch")
    class_label: str = Field(alias="class")
    viewpoint: Optional[ViewpointDegrees] = None
    resize: bool = False


class InferenceResponse(BaseModel):
    mesh_obj: str
    predicted_viewpoint: ViewpointDegrees
    model_hash: str
    config_hash: str
    timing_ms: float


def load_bundles(bundles_dir) -> dict:
    """One ModelBundle per subdirectory, keyed by its class label."""
    bundles_dir = Path(bundles_dir)
    if not bundles_dir.is_dir():
        raise FileNotFoundError(f"bundle directory {bundles_dir} does not exist")
    bundles = {}
    for child in sorted(bundles_dir.iterdir()):
        if (child / "manifest.json").exists():
            bundle = ModelBundle.load(child)
            bundles[bundle.spec.class_label] = bundle
    if not bundles:
        raise ValueError(f"no model bundles found under {bundles_dir}")
    return bundles


def decode_sketch(data: str, image_size: int, resize: bool) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        image = Image.open(io.BytesIO(raw)).convert("L")
    except (ValueError, UnidentifiedImageError) as exc:
        raise HTTPException(status_code=400, detail=f"invalid sketch image: {exc}")
    arr = np.asarray(image, dtype=np.float32) / 255.0
    if arr.shape != (image_size, image_size):
        if not resize:
            raise HTTPException(
                status_code=400,
                detail=f"sketch is {arr.shape[1]}x{arr.shape[0]}, model expects "
                f"{image_size}x{image_size}; pass resize=true to rescale",
            )
        arr = pad_to_square(arr, image_size)
    return arr


def create_app(bundles: dict) -> FastAPI:
    app = FastAPI(title="sketch-to-mesh inference")
    counter = {"requests": 0}
    counter_lock = threading.Lock()

    @app.get("/health")
    def health():
        with counter_lock:
            served = counter["requests"]
        return {"status": "ok", "classes": len(bundles), "requests_served": served}

    @app.get("/classes")
    def classes():
        return {"classes": sorted(bundles)}

    @app.post("/infer", response_model=InferenceResponse)
    def infer(request: InferenceRequest) -> InferenceResponse:
        start = time.perf_counter()
        bundle = bundles.get(request.class_label)
        if bundle is None:
            raise HTTPException(
                status_code=404,
                detail=f"unknown class {request.class_label!r}; "
                f"available: {sorted(bundles)}",
            )
        sketch = decode_sketch(request.sketch, bundle.spec.image_size, request.resize)
        viewpoint = None
        if request.viewpoint is not None:
            viewpoint = Viewpoint.from_degrees(
                request.viewpoint.elevation_deg,
                request.viewpoint.azimuth_deg,
                distance=bundle.camera_distance,
            )
        mesh, predicted = run_inference(bundle, sketch, viewpoint=viewpoint)
        elevation_deg, azimuth_deg = predicted.as_degrees()
        with counter_lock:
            counter["requests"] += 1
        return InferenceResponse(
            mesh_obj=mesh_to_obj(mesh),
            predicted_viewpoint=ViewpointDegrees(
                elevation_deg=elevation_deg, azimuth_deg=azimuth_deg
            ),
            model_hash=bundle.state_hash(),
            config_hash=bundle.config_hash,
            timing_ms=(time.perf_counter() - start) * 1000.0,
        )

    return app


def serve(bundles_dir, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    app = create_app(load_bundles(bundles_dir))
    uvicorn.run(app, host=host, port=port)
