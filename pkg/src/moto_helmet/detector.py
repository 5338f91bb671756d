"""Prompted-detector backends: replay files, a synthetic noise model, and a
remote inference client.

Every backend answers the same contract: ``detect(request)`` returns scored
boxes with score >= the request threshold, sorted by descending score (ties
keep insertion order). Raising the threshold can only shrink the result.

Image keys and coordinate spaces
--------------------------------

Requests address images by key rather than by pixels:

* ``video/frame``            -> the whole frame, answered in model-input
                                coordinates (the frame resized to the
                                pipeline's detector input, 960x960 by
                                default);
* ``video/frame@L,T,W,H``    -> an integral crop of the original frame,
                                answered in crop-local coordinates.

Replay files must be recorded against the same convention. The replay
format is line-delimited JSON, one record per (image_key, prompt)::

    {"image_key":"001/5","prompt":"motorcycle","detections":[{"x":..,"y":..,"w":..,"h":..,"score":..}]}

Serialization is canonical: fixed key order, box coordinates via ``repr``,
scores with 6 decimals, LF endings -- so dump(load(f)) == f.
"""

from __future__ import annotations

import io
import json
import logging
import math
import threading
import zlib
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .dataset import (
    FRAME_SIZE,
    MOTORCYCLE_CLASS_ID,
    PERSON_CLASS_IDS,
    FrameAnnotation,
)
from .geometry import (
    FRAME,
    MODEL_INPUT,
    Box,
    ImageSize,
    crop_space,
    rescale_box,
)

log = logging.getLogger(__name__)

PROMPT_MOTORCYCLE = "motorcycle"
PROMPT_PERSON = "person"
PROMPT_HELMET = "helmet"

# Frame-level prompts the synthetic backend knows how to simulate.
PROMPT_CLASS_FILTERS = {
    PROMPT_MOTORCYCLE: frozenset({MOTORCYCLE_CLASS_ID}),
    PROMPT_PERSON: PERSON_CLASS_IDS,
}


def frame_key(video_id: str, frame_index: int) -> str:
    return f"{video_id}/{frame_index}"


def crop_key(video_id: str, frame_index: int, rect: tuple[int, int, int, int]) -> str:
    left, top, w, h = rect
    return f"{video_id}/{frame_index}@{left},{top},{w},{h}"


def parse_image_key(key: str) -> tuple[str, int, tuple[int, int, int, int] | None]:
    """Split an image key into (video_id, frame_index, crop rect or None)."""
    base, _, region = key.partition("@")
    video_id, _, frame = base.rpartition("/")
    if not video_id or not frame:
        raise ValueError(f"malformed image key {key!r}")
    rect = None
    if region:
        parts = region.split(",")
        if len(parts) != 4:
            raise ValueError(f"malformed crop region in image key {key!r}")
        rect = tuple(int(p) for p in parts)
    return video_id, int(frame), rect  # type: ignore[return-value]


def space_for_key(key: str) -> str:
    """Coordinate space a backend answers in for this key."""
    _, _, rect = parse_image_key(key)
    if rect is None:
        return MODEL_INPUT
    return crop_space(rect[0], rect[1])


@dataclass(frozen=True)
class DetectionRequest:
    image_key: str
    prompt: str
    threshold: float

    def __post_init__(self) -> None:
        if not self.prompt.strip():
            raise ValueError("prompt must be non-empty")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0,1], got {self.threshold}")


@dataclass(frozen=True)
class ScoredDetection:
    box: Box
    score: float
    prompt: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0 or not math.isfinite(self.score):
            raise ValueError(f"score must be in [0,1], got {self.score}")


class FrameNotFoundError(LookupError):
    """An image key that no backend resource resolves."""


class TransportError(OSError):
    """Remote transport failure; safe to retry, distinct from an empty result."""


class DetectorBackend:
    """Interface all detector backends implement."""

    def detect(self, request: DetectionRequest) -> list[ScoredDetection]:
        raise NotImplementedError


def detect(backend: DetectorBackend, request: DetectionRequest) -> list[ScoredDetection]:
    return backend.detect(request)


def _sorted_by_score(dets: Iterable[ScoredDetection]) -> list[ScoredDetection]:
    # sorted() is stable, so equal scores keep insertion order
    return sorted(dets, key=lambda d: -d.score)


# --------------------------------------------------------------------------
# Replay backend
# --------------------------------------------------------------------------


class ReplayParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


_DET_FIELDS = ("x", "y", "w", "h", "score")


class ReplayBackend(DetectorBackend):
    """Serves pre-recorded detections from a replay file.

    The store is immutable after construction; a missing (key, prompt) pair
    is an empty result, mirroring a detector that found nothing, and bumps
    ``miss_count`` for diagnostics.
    """

    def __init__(self, records: Iterable[tuple[str, str, Sequence[ScoredDetection]]] = ()):
        self._records: dict[tuple[str, str], tuple[ScoredDetection, ...]] = {}
        self._order: list[tuple[str, str]] = []
        for image_key, prompt, dets in records:
            self._put(image_key, prompt, dets)
        self.miss_count = 0

    def _put(self, image_key: str, prompt: str, dets: Sequence[ScoredDetection]) -> None:
        key = (image_key, prompt)
        if key not in self._records:
            self._order.append(key)
        self._records[key] = tuple(dets)

    def __len__(self) -> int:
        return len(self._records)

    def detect(self, request: DetectionRequest) -> list[ScoredDetection]:
        stored = self._records.get((request.image_key, request.prompt))
        if stored is None:
            self.miss_count += 1
            log.debug("replay miss: key=%r prompt=%r", request.image_key, request.prompt)
            return []
        return _sorted_by_score(d for d in stored if d.score >= request.threshold)

    @classmethod
    def load(cls, source: IO[bytes] | IO[str] | bytes | str) -> "ReplayBackend":
        backend = cls()
        for line_no, raw in enumerate(_iter_text_lines(source), start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ReplayParseError(line_no, f"invalid JSON: {e.msg}") from None
            if not isinstance(record, dict):
                raise ReplayParseError(line_no, "record is not an object")
            try:
                image_key = record["image_key"]
                prompt = record["prompt"]
                raw_dets = record["detections"]
            except KeyError as e:
                raise ReplayParseError(line_no, f"missing field {e.args[0]!r}") from None
            if not isinstance(image_key, str) or not isinstance(prompt, str):
                raise ReplayParseError(line_no, "image_key and prompt must be strings")
            if not isinstance(raw_dets, list):
                raise ReplayParseError(line_no, "detections must be a list")
            space = space_for_key(image_key)
            dets = []
            for d in raw_dets:
                try:
                    box = Box(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]), space=space)
                    dets.append(ScoredDetection(box, float(d["score"]), prompt))
                except (TypeError, KeyError, ValueError) as e:
                    raise ReplayParseError(line_no, f"bad detection entry: {e}") from None
            backend._put(image_key, prompt, dets)
        return backend

    def dump(self, sink: IO[str]) -> int:
        """Write the canonical replay serialization; returns characters written."""
        written = 0
        for key in self._order:
            image_key, prompt = key
            written += sink.write(format_replay_record(image_key, prompt, self._records[key]))
        return written

    def dumps(self) -> str:
        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()


def format_replay_record(image_key: str, prompt: str, dets: Sequence[ScoredDetection]) -> str:
    """One canonical replay line, LF-terminated."""
    body = ",".join(
        '{"x":%s,"y":%s,"w":%s,"h":%s,"score":%.6f}'
        % (repr(float(d.box.x)), repr(float(d.box.y)),
           repr(float(d.box.w)), repr(float(d.box.h)), d.score)
        for d in dets
    )
    return '{"image_key":%s,"prompt":%s,"detections":[%s]}\n' % (
        json.dumps(image_key),
        json.dumps(prompt),
        body,
    )


def replay_load(source: IO[bytes] | IO[str] | bytes | str) -> ReplayBackend:
    return ReplayBackend.load(source)


def _iter_text_lines(source) -> Iterator[str]:
    if isinstance(source, bytes):
        yield from io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        yield from io.StringIO(source)
    else:
        for raw in source:
            yield raw.decode("utf-8") if isinstance(raw, bytes) else raw


# --------------------------------------------------------------------------
# Synthetic backend
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    """Noise model layered over ground truth to fabricate detections.

    Defaults are the identity: nothing dropped, nothing invented, no
    jitter, every kept box scored exactly 1.0.
    """

    drop_rate: float = 0.0
    spurious_rate: float = 0.0
    jitter_sigma: float = 0.0
    tp_score: tuple[float, float] = (1.0, 1.0)
    fp_score: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError(f"drop_rate must be in [0,1], got {self.drop_rate}")
        if self.spurious_rate < 0:
            raise ValueError("spurious_rate must be >= 0")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        for name, (lo, hi) in (("tp_score", self.tp_score), ("fp_score", self.fp_score)):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(f"{name} range must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})")

    def to_json(self) -> str:
        return json.dumps(
            {
                "drop_rate": self.drop_rate,
                "spurious_rate": self.spurious_rate,
                "jitter_sigma": self.jitter_sigma,
                "tp_score": list(self.tp_score),
                "fp_score": list(self.fp_score),
                "seed": self.seed,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "NoiseConfig":
        data = json.loads(text)
        return cls(
            drop_rate=data.get("drop_rate", 0.0),
            spurious_rate=data.get("spurious_rate", 0.0),
            jitter_sigma=data.get("jitter_sigma", 0.0),
            tp_score=tuple(data.get("tp_score", (1.0, 1.0))),
            fp_score=tuple(data.get("fp_score", (0.0, 1.0))),
            seed=int(data.get("seed", 0)),
        )


_MIN_SPURIOUS_PX = 8.0


def _stable_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def _frame_rng(cfg: NoiseConfig, video_id: str, frame_index: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(
        [cfg.seed & 0xFFFFFFFF, _stable_hash(video_id), frame_index, _stable_hash(stream)]
    )


def synthetic_generate(
    frame: FrameAnnotation,
    cfg: NoiseConfig,
    class_ids: frozenset[int] | set[int],
    frame_size: ImageSize = FRAME_SIZE,
    prompt: str = "synthetic",
) -> list[ScoredDetection]:
    """Noisy frame-space detections derived from one frame's ground truth.

    Each GT object of the requested classes is kept with probability
    1 - drop_rate, its edges jittered by N(0, jitter_sigma^2); on top,
    Poisson(spurious_rate) false boxes are drawn uniform in position and
    log-uniform in size between 8 px and half the frame. Deterministic for
    a fixed config: the RNG stream is keyed on (seed, video, frame,
    class filter).
    """
    stream = "classes:" + ",".join(str(c) for c in sorted(class_ids))
    rng = _frame_rng(cfg, frame.video_id, frame.frame_index, stream)
    out: list[ScoredDetection] = []

    for obj in frame.objects:
        if obj.cls.id not in class_ids:
            continue
        keep = rng.random() >= cfg.drop_rate
        jitter = rng.normal(0.0, cfg.jitter_sigma, size=4) if cfg.jitter_sigma > 0 else np.zeros(4)
        score = float(rng.uniform(cfg.tp_score[0], cfg.tp_score[1]))
        if not keep:
            continue
        b = obj.box
        # float() strips numpy scalars so replay serialization stays canonical.
        left = float(min(max(0.0, b.x + jitter[0]), frame_size.width))
        top = float(min(max(0.0, b.y + jitter[1]), frame_size.height))
        right = float(min(max(left, b.right + jitter[2]), frame_size.width))
        bottom = float(min(max(top, b.bottom + jitter[3]), frame_size.height))
        out.append(ScoredDetection(Box(left, top, right - left, bottom - top), score, prompt))

    n_spurious = int(rng.poisson(cfg.spurious_rate))
    max_w = max(_MIN_SPURIOUS_PX + 1e-6, frame_size.width / 2.0)
    max_h = max(_MIN_SPURIOUS_PX + 1e-6, frame_size.height / 2.0)
    for _ in range(n_spurious):
        w = float(np.exp(rng.uniform(np.log(_MIN_SPURIOUS_PX), np.log(max_w))))
        h = float(np.exp(rng.uniform(np.log(_MIN_SPURIOUS_PX), np.log(max_h))))
        left = float(rng.uniform(0.0, frame_size.width - w))
        top = float(rng.uniform(0.0, frame_size.height - h))
        score = float(rng.uniform(cfg.fp_score[0], cfg.fp_score[1]))
        out.append(ScoredDetection(Box(left, top, w, h), score, prompt))
    return out


class SyntheticBackend(DetectorBackend):
    """Fabricates detections from ground truth plus a noise model.

    Only frame-key requests with the motorcycle/person prompts are
    simulated; crop keys and other prompts yield empty results. Frame-key
    answers follow the model-input-space convention, so ``input_size``
    must match the pipeline's; pass ``input_size == frame_size`` to get
    untouched frame coordinates.
    """

    def __init__(
        self,
        frames: Iterable[FrameAnnotation],
        cfg: NoiseConfig,
        frame_size: ImageSize = FRAME_SIZE,
        input_size: ImageSize | None = None,
    ):
        self._frames = {(f.video_id, f.frame_index): f for f in frames}
        self._cfg = cfg
        self._frame_size = frame_size
        self._input_size = input_size if input_size is not None else frame_size

    def detect(self, request: DetectionRequest) -> list[ScoredDetection]:
        video_id, frame_index, rect = parse_image_key(request.image_key)
        class_ids = PROMPT_CLASS_FILTERS.get(request.prompt)
        if rect is not None or class_ids is None:
            return []
        frame = self._frames.get((video_id, frame_index))
        if frame is None:
            raise FrameNotFoundError(request.image_key)
        dets = synthetic_generate(
            frame, self._cfg, class_ids, frame_size=self._frame_size, prompt=request.prompt
        )
        scaled = [
            ScoredDetection(
                rescale_box(d.box, self._frame_size, self._input_size, space=MODEL_INPUT),
                d.score,
                d.prompt,
            )
            for d in dets
        ]
        return _sorted_by_score(d for d in scaled if d.score >= request.threshold)


# --------------------------------------------------------------------------
# Remote backend
# --------------------------------------------------------------------------


class FrameStore:
    """Resolves frame keys to image files laid out ``root/<video>/<frame>.png``."""

    SUFFIXES = (".png", ".jpg", ".jpeg")

    def __init__(self, root):
        from pathlib import Path

        self.root = Path(root)

    def load(self, video_id: str, frame_index: int):
        from PIL import Image

        for suffix in self.SUFFIXES:
            path = self.root / video_id / f"{frame_index}{suffix}"
            if path.exists():
                return Image.open(path).convert("RGB")
        raise FrameNotFoundError(f"{video_id}/{frame_index} under {self.root}")


DEFAULT_REMOTE_TIMEOUT = 30.0


class RemoteBackend(DetectorBackend):
    """HTTP client for the inference service's POST /detect endpoint.

    The client resolves the image key locally, crops/resizes the pixels and
    uploads PNG bytes; the service answers in submitted-image coordinates,
    which by construction match the request's space. In-flight requests are
    bounded by a semaphore; each worker thread gets its own session.
    """

    def __init__(
        self,
        base_url: str,
        frame_store: FrameStore,
        input_size: ImageSize = ImageSize(960, 960),
        timeout: float = DEFAULT_REMOTE_TIMEOUT,
        max_in_flight: int = 4,
    ):
        self.base_url = base_url.rstrip("/")
        self.frame_store = frame_store
        self.input_size = input_size
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._local = threading.local()

    def _session(self):
        import requests

        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _image_bytes(self, image_key: str) -> bytes:
        from PIL import Image

        video_id, frame_index, rect = parse_image_key(image_key)
        image = self.frame_store.load(video_id, frame_index)
        if rect is not None:
            left, top, w, h = rect
            image = image.crop((left, top, left + w, top + h))
        else:
            image = image.resize((self.input_size.width, self.input_size.height), Image.BILINEAR)
        buf = io.BytesIO()
        image.save(buf, format="PNG")
        return buf.getvalue()

    def detect(self, request: DetectionRequest) -> list[ScoredDetection]:
        import requests

        payload = self._image_bytes(request.image_key)
        space = space_for_key(request.image_key)
        with self._slots:
            try:
                response = self._session().post(
                    f"{self.base_url}/detect",
                    files={"image": ("frame.png", payload, "image/png")},
                    data={"prompt": request.prompt, "threshold": repr(request.threshold)},
                    timeout=self.timeout,
                )
            except (requests.ConnectionError, requests.Timeout) as e:
                raise TransportError(f"detect transport failure: {e}") from e
        if response.status_code >= 500:
            raise TransportError(f"service error {response.status_code}: {response.text[:200]}")
        if response.status_code >= 400:
            raise ValueError(f"service rejected request ({response.status_code}): {response.text[:200]}")
        try:
            raw = response.json()["detections"]
        except (ValueError, KeyError) as e:
            raise TransportError(f"malformed service response: {e}") from e
        dets = [
            ScoredDetection(
                Box(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]), space=space),
                float(d["score"]),
                request.prompt,
            )
            for d in raw
        ]
        return _sorted_by_score(d for d in dets if d.score >= request.threshold)

    def health(self) -> bool:
        import requests

        try:
            response = self._session().get(f"{self.base_url}/health", timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as e:
            raise TransportError(f"health transport failure: {e}") from e
        return response.status_code == 200 and response.json().get("status") == "ok"
