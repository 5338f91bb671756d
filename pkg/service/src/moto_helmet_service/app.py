"""The HTTP surface: POST /detect, POST /classify_seat, GET /health.

Handlers are stateless; actual model access is serialized behind one
lock so a single-threaded model implementation is safe under concurrent
clients. All error bodies are `{"error": "<message>"}` with a 4xx status
for bad requests and 5xx for inference failures.
"""

from __future__ import annotations

import io
import threading

import torch
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from .detectors import BlobDetector
from .seat import ROLES, preprocess, seeded_model


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _decode(data: bytes) -> Image.Image:
    try:
        image = Image.open(io.BytesIO(data))
        image.load()
        return image
    except (UnidentifiedImageError, OSError) as e:
        raise ValueError(f"undecodable image: {e}") from e


def _clamp_boxes(detections: list[dict], width: int, height: int) -> list[dict]:
    clamped = []
    for d in detections:
        x = min(max(0.0, float(d["x"])), float(width))
        y = min(max(0.0, float(d["y"])), float(height))
        w = min(float(d["w"]), width - x)
        h = min(float(d["h"]), height - y)
        if w <= 0 or h <= 0:
            continue
        clamped.append({"x": x, "y": y, "w": w, "h": h,
                        "score": float(d["score"])})
    return clamped


def create_app(detector=None, seat_model=None) -> FastAPI:
    """Build the service around an injected detector and seat classifier.

    Defaults: the deterministic blob detector and a seeded (untrained)
    seat network, which together satisfy every wire contract without any
    downloaded weights.
    """
    detector = detector if detector is not None else BlobDetector()
    seat_model = seat_model if seat_model is not None else seeded_model()
    model_lock = threading.Lock()

    app = FastAPI(title="helmet pipeline inference service")

    @app.exception_handler(RequestValidationError)
    async def malformed_request(request, exc):
        return _error(400, f"malformed request: {exc.errors()[0].get('msg', 'invalid')}")

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/detect")
    async def detect(image: UploadFile = File(...), prompt: str = Form(...),
                     threshold: str = Form("0.0")):
        try:
            value = float(threshold)
        except ValueError:
            return _error(400, f"threshold must be a number, got {threshold!r}")
        if not 0.0 <= value <= 1.0:
            return _error(400, f"threshold {value} outside [0,1]")
        if not prompt.strip():
            return _error(400, "prompt must be non-empty")
        try:
            decoded = _decode(await image.read())
        except ValueError as e:
            return _error(400, str(e))

        try:
            with model_lock:
                raw = detector.detect(decoded, prompt)
        except Exception as e:
            return _error(500, f"inference failed: {e}")

        width, height = decoded.size
        detections = [d for d in _clamp_boxes(raw, width, height)
                      if d["score"] >= value]
        return {"detections": detections}

    @app.post("/classify_seat")
    async def classify_seat(image: UploadFile = File(...)):
        try:
            decoded = _decode(await image.read())
        except ValueError as e:
            return _error(400, str(e))

        try:
            batch = preprocess(decoded).unsqueeze(0)
            with model_lock, torch.no_grad():
                seat_model.eval()
                probabilities = torch.softmax(seat_model(batch)[0], dim=0)
        except Exception as e:
            return _error(500, f"inference failed: {e}")

        probs = probabilities.tolist()
        return {"role": ROLES[int(probabilities.argmax())],
                "probabilities": probs}

    return app
