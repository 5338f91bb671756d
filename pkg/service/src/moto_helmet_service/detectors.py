"""Detector backends the service can mount behind POST /detect.

Two implementations of the same duck type, `detect(image, prompt) ->
[{x,y,w,h,score}]` with boxes in submitted-image coordinates and scores
in [0,1]:

- BlobDetector: deterministic color-blob finder used for contract tests
  and offline development. No weights, no downloads, same answer every
  time.
- Owlv2Detector: adapter around a transformers zero-shot detection
  checkpoint, loaded lazily on first request. Needs the model weights to
  be present locally or fetchable.
"""

from __future__ import annotations

import numpy as np
from PIL import Image
from scipy import ndimage

# Prompt -> RGB channel that must dominate for a pixel to belong to a blob.
PROMPT_CHANNELS = {"motorcycle": 0, "person": 1, "helmet": 2}


class BlobDetector:
    """Finds connected regions where the prompt's color channel dominates.

    Works at a fixed internal resolution (like a real model) and maps the
    boxes back to the submitted image, so the resize/rescale contract of
    the endpoint is exercised for real. The score is a fixed function of
    blob area, already in [0,1]; prompts without an assigned channel
    yield no detections.
    """

    input_size = 128
    min_blob_px = 4
    channel_floor = 96  # dominant channel must be at least this bright
    channel_lead = 32  # and this far above both other channels

    def detect(self, image: Image.Image, prompt: str) -> list[dict]:
        channel = PROMPT_CHANNELS.get(prompt.strip().lower())
        if channel is None:
            return []
        width, height = image.size
        small = image.convert("RGB").resize(
            (self.input_size, self.input_size), Image.BILINEAR)
        arr = np.asarray(small, dtype=np.int16)

        others = [c for c in range(3) if c != channel]
        mask = (
            (arr[:, :, channel] >= self.channel_floor)
            & (arr[:, :, channel] >= arr[:, :, others[0]] + self.channel_lead)
            & (arr[:, :, channel] >= arr[:, :, others[1]] + self.channel_lead)
        )
        labeled, count = ndimage.label(mask)

        sx = width / self.input_size
        sy = height / self.input_size
        detections = []
        for blob in ndimage.find_objects(labeled):
            rows, cols = blob
            area = int(mask[rows, cols].sum())
            if area < self.min_blob_px:
                continue
            x = cols.start * sx
            y = rows.start * sy
            w = (cols.stop - cols.start) * sx
            h = (rows.stop - rows.start) * sy
            frac = area / (self.input_size * self.input_size)
            score = min(0.97, 0.30 + 2.0 * frac ** 0.5)
            detections.append({
                "x": round(float(x), 4), "y": round(float(y), 4),
                "w": round(float(w), 4), "h": round(float(h), 4),
                "score": round(float(score), 6),
            })
        detections.sort(key=lambda d: -d["score"])
        return detections


class Owlv2Detector:
    """Zero-shot prompted detection via a transformers checkpoint.

    Imports transformers and loads weights on first use so the rest of
    the service stays importable without them. Scores come out of the
    library's post-processing, which maps the model's logits through a
    logistic transform, so they are probabilities in [0,1]. Boxes are
    returned in submitted-image coordinates.
    """

    def __init__(self, model_name: str = "google/owlv2-base-patch16-ensemble"):
        self.model_name = model_name
        self._model = None
        self._processor = None

    def _load(self):
        if self._model is None:
            try:
                from transformers import Owlv2ForObjectDetection, Owlv2Processor
            except ImportError as e:
                raise RuntimeError(
                    "transformers is not installed; install the service's "
                    "'owlv2' extra to use this detector") from e
            self._processor = Owlv2Processor.from_pretrained(self.model_name)
            self._model = Owlv2ForObjectDetection.from_pretrained(self.model_name)
            self._model.eval()
        return self._model, self._processor

    def detect(self, image: Image.Image, prompt: str) -> list[dict]:
        import torch

        model, processor = self._load()
        rgb = image.convert("RGB")
        inputs = processor(text=[[prompt]], images=rgb, return_tensors="pt")
        with torch.no_grad():
            outputs = model(**inputs)
        target_sizes = torch.tensor([[rgb.size[1], rgb.size[0]]])
        results = processor.post_process_object_detection(
            outputs, threshold=0.0, target_sizes=target_sizes)[0]

        detections = []
        for score, box in zip(results["scores"].tolist(),
                              results["boxes"].tolist()):
            x0, y0, x1, y1 = box
            detections.append({
                "x": float(x0), "y": float(y0),
                "w": float(x1 - x0), "h": float(y1 - y0),
                "score": float(score),
            })
        detections.sort(key=lambda d: -d["score"])
        return detections
