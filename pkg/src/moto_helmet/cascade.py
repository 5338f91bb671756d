"""The staged detection pipeline: motorcycles first, then people inside each
expanded motorcycle crop, then a per-person helmet boolean and seat role,
composed into the nine-class output.

Stage 1 queries the whole frame (answered at model-input scale) and maps
boxes back to frame coordinates. Stage 2 expands each motorcycle box by the
configured margins, crops, and looks for people inside. Stages 3 and 4 crop
each person tight and ask for a helmet and a seat role. People rediscovered
through overlapping motorcycle crops are deduplicated at the end.

Frames are independent work units; a run over one frame only touches the
backend and the seat classifier, both of which must tolerate concurrent
calls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .dataset import FRAME_SIZE, ObjectClass, Role, _fmt_num
from .detector import (
    PROMPT_HELMET,
    PROMPT_MOTORCYCLE,
    PROMPT_PERSON,
    DetectionRequest,
    DetectorBackend,
    ScoredDetection,
    crop_key,
    frame_key,
)
from .geometry import (
    CASCADE_MARGINS,
    FRAME,
    Box,
    ImageSize,
    Margins,
    clamp_box,
    crop_to_frame,
    expand_box,
    iou,
    pixel_rect,
    rescale_box,
)

log = logging.getLogger(__name__)

# Crops below this many pixels per side skip the helmet/seat stages.
MIN_CROP_PX = 2


@dataclass(frozen=True)
class CascadeConfig:
    model_input_size: ImageSize = ImageSize(960, 960)
    frame_size: ImageSize = FRAME_SIZE
    margins: Margins = CASCADE_MARGINS
    motorcycle_threshold: float = 0.3
    person_threshold: float = 0.3
    helmet_threshold: float = 0.3
    person_dedup_iou: float = 0.9

    def __post_init__(self) -> None:
        for name in ("motorcycle_threshold", "person_threshold", "helmet_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {value}")
        if not 0.0 < self.person_dedup_iou <= 1.0:
            raise ValueError(f"person_dedup_iou must be in (0,1], got {self.person_dedup_iou}")

    def with_threshold(self, threshold: float) -> "CascadeConfig":
        """All three stage thresholds set to one swept value."""
        return CascadeConfig(
            model_input_size=self.model_input_size,
            frame_size=self.frame_size,
            margins=self.margins,
            motorcycle_threshold=threshold,
            person_threshold=threshold,
            helmet_threshold=threshold,
            person_dedup_iou=self.person_dedup_iou,
        )


@dataclass(frozen=True)
class RiderRecord:
    """A person associated to a motorcycle, with helmet and seat attributes."""

    motorcycle_index: int
    person_box: Box
    person_score: float
    helmet: bool
    seat_role: Role | None = None
    composite: ObjectClass | None = None


@dataclass(frozen=True)
class CascadeOutput:
    video_id: str
    frame_index: int
    motorcycles: tuple[ScoredDetection, ...]
    riders: tuple[RiderRecord, ...]


class SeatClassifier:
    """Oracle mapping a person-crop image key to a seat role (None = unknown)."""

    def classify(self, image_key: str) -> Role | None:
        raise NotImplementedError


class UnclassifiedSeat(SeatClassifier):
    def classify(self, image_key: str) -> Role | None:
        return None


class ConstantSeat(SeatClassifier):
    def __init__(self, role: Role):
        self.role = role

    def classify(self, image_key: str) -> Role | None:
        return self.role


class MappingSeat(SeatClassifier):
    """Fixture classifier: explicit crop-key to role table."""

    def __init__(self, table: dict[str, Role], default: Role | None = None):
        self.table = dict(table)
        self.default = default

    def classify(self, image_key: str) -> Role | None:
        return self.table.get(image_key, self.default)


class RemoteSeatClassifier(SeatClassifier):
    """Client for the inference service's POST /classify_seat endpoint."""

    def __init__(self, base_url: str, frame_store, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.frame_store = frame_store
        self.timeout = timeout

    def classify(self, image_key: str) -> Role | None:
        import io

        import requests

        from .detector import parse_image_key

        video_id, frame_index, rect = parse_image_key(image_key)
        image = self.frame_store.load(video_id, frame_index)
        if rect is not None:
            left, top, w, h = rect
            image = image.crop((left, top, left + w, top + h))
        buf = io.BytesIO()
        image.save(buf, format="PNG")
        response = requests.post(
            f"{self.base_url}/classify_seat",
            files={"image": ("crop.png", buf.getvalue(), "image/png")},
            timeout=self.timeout,
        )
        response.raise_for_status()
        return Role(response.json()["role"])


_ROLE_HELMET_TO_ID = {
    (Role.DRIVER, True): 2,
    (Role.DRIVER, False): 3,
    (Role.PASSENGER1, True): 4,
    (Role.PASSENGER1, False): 5,
    (Role.PASSENGER2, True): 6,
    (Role.PASSENGER2, False): 7,
    (Role.CHILD, True): 8,
    (Role.CHILD, False): 9,
}


def assemble_class(seat_role: Role | None, helmet: bool) -> ObjectClass:
    """Compose a person class id from seat role and helmet status."""
    if seat_role is None:
        raise ValueError("cannot assemble a class for an unclassified seat role")
    key = (seat_role, bool(helmet))
    if key not in _ROLE_HELMET_TO_ID:
        raise ValueError(f"no person class for role {seat_role}")
    return ObjectClass.from_id(_ROLE_HELMET_TO_ID[key])


class CascadeStageError(RuntimeError):
    """Backend failure wrapped with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage


def dedup_persons(riders: Sequence[RiderRecord], dedup_iou: float) -> list[RiderRecord]:
    """Suppress people rediscovered through overlapping motorcycle crops.

    Candidates are visited by descending person score (ties: lower
    motorcycle index, then insertion order); a rider survives if its box
    overlaps no earlier survivor at IoU >= dedup_iou. Survivors come back
    in their original order.
    """
    order = sorted(
        range(len(riders)),
        key=lambda i: (-riders[i].person_score, riders[i].motorcycle_index, i),
    )
    kept: list[int] = []
    for idx in order:
        box = riders[idx].person_box
        if all(iou(box, riders[k].person_box) < dedup_iou for k in kept):
            kept.append(idx)
    return [riders[i] for i in sorted(kept)]


class _MemoBackend:
    """Per-frame memo so identical (key, prompt, threshold) queries hit once."""

    def __init__(self, backend: DetectorBackend):
        self._backend = backend
        self._cache: dict[tuple[str, str, float], list[ScoredDetection]] = {}

    def detect(self, key: str, prompt: str, threshold: float, stage: str) -> list[ScoredDetection]:
        cache_key = (key, prompt, threshold)
        if cache_key not in self._cache:
            try:
                self._cache[cache_key] = self._backend.detect(
                    DetectionRequest(image_key=key, prompt=prompt, threshold=threshold)
                )
            except Exception as e:
                raise CascadeStageError(stage, e) from e
        return self._cache[cache_key]


def run_frame(
    video_id: str,
    frame_index: int,
    backend: DetectorBackend,
    seat_classifier: SeatClassifier | None = None,
    cfg: CascadeConfig = CascadeConfig(),
    attributes: bool = True,
) -> CascadeOutput:
    """Run the full pipeline over one frame.

    With ``attributes=False`` only the detection stages run; riders come
    back helmet-less and unclassified, and the backend never sees helmet
    or seat queries. Detection-only evaluations use this to keep replay
    miss counters honest.
    """
    seat_classifier = seat_classifier or UnclassifiedSeat()
    memo = _MemoBackend(backend)
    fkey = frame_key(video_id, frame_index)

    stage1 = memo.detect(fkey, PROMPT_MOTORCYCLE, cfg.motorcycle_threshold, "motorcycle")
    motorcycles = tuple(
        ScoredDetection(
            rescale_box(d.box, cfg.model_input_size, cfg.frame_size, space=FRAME),
            d.score,
            d.prompt,
        )
        for d in stage1
    )

    riders: list[RiderRecord] = []
    for moto_index, moto in enumerate(motorcycles):
        crop_box = expand_box(moto.box, cfg.margins, cfg.frame_size)
        rect = pixel_rect(crop_box, cfg.frame_size)
        if rect is None:
            log.info("%s: motorcycle %d crop empty after clamping, skipped", fkey, moto_index)
            continue
        ckey = crop_key(video_id, frame_index, rect)
        persons = memo.detect(ckey, PROMPT_PERSON, cfg.person_threshold, "person")
        for person in persons:
            person_box = crop_to_frame(person.box, (rect[0], rect[1]))
            helmet = False
            seat_role: Role | None = None
            person_rect = pixel_rect(clamp_box(person_box, cfg.frame_size), cfg.frame_size)
            if not attributes:
                pass
            elif person_rect is None or min(person_rect[2], person_rect[3]) < MIN_CROP_PX:
                log.info("%s: person crop below %dpx, helmet/seat stages skipped", fkey, MIN_CROP_PX)
            else:
                pkey = crop_key(video_id, frame_index, person_rect)
                helmet = len(memo.detect(pkey, PROMPT_HELMET, cfg.helmet_threshold, "helmet")) >= 1
                try:
                    seat_role = seat_classifier.classify(pkey)
                except Exception as e:
                    log.warning("%s: seat classification failed (%s), left unclassified", fkey, e)
                    seat_role = None
            riders.append(
                RiderRecord(
                    motorcycle_index=moto_index,
                    person_box=person_box,
                    person_score=person.score,
                    helmet=helmet,
                    seat_role=seat_role,
                    composite=assemble_class(seat_role, helmet) if seat_role is not None else None,
                )
            )

    deduped = dedup_persons(riders, cfg.person_dedup_iou)
    return CascadeOutput(video_id, frame_index, motorcycles, tuple(deduped))


def classify_helmet_on_gt(
    video_id: str,
    frame_index: int,
    gt_boxes: Sequence[Box],
    backend: DetectorBackend,
    threshold: float,
    frame_size: ImageSize = FRAME_SIZE,
) -> list[bool]:
    """Helmet boolean per ground-truth person box, bypassing person detection.

    Each box is cropped as-is and queried with the helmet prompt; a box
    whose crop is degenerate counts as no-helmet.
    """
    memo = _MemoBackend(backend)
    results: list[bool] = []
    for box in gt_boxes:
        rect = pixel_rect(clamp_box(box, frame_size), frame_size)
        if rect is None or min(rect[2], rect[3]) < MIN_CROP_PX:
            results.append(False)
            continue
        key = crop_key(video_id, frame_index, rect)
        results.append(len(memo.detect(key, PROMPT_HELMET, threshold, "helmet")) >= 1)
    return results


# --------------------------------------------------------------------------
# Output serialization: annotation CSV plus a trailing score column
# --------------------------------------------------------------------------


def write_cascade_csv(outputs: Iterable[CascadeOutput], sink: IO[str]) -> int:
    """Rows ``video_id,frame,bb_left,bb_top,bb_width,bb_height,class,score``.

    Motorcycles serialize as class 1; riders need an assembled composite
    class and are skipped (with a warning) while unclassified.
    """
    written = 0
    skipped = 0
    for out in outputs:
        for moto in out.motorcycles:
            written += sink.write(_prediction_line(out, moto.box, 1, moto.score))
        for rider in out.riders:
            if rider.composite is None:
                skipped += 1
                continue
            written += sink.write(
                _prediction_line(out, rider.person_box, rider.composite.id, rider.person_score)
            )
    if skipped:
        log.warning("cascade CSV: skipped %d rider(s) without a composite class", skipped)
    return written


def _prediction_line(out: CascadeOutput, box: Box, class_id: int, score: float) -> str:
    return (
        f"{out.video_id},{out.frame_index},"
        f"{_fmt_num(box.x)},{_fmt_num(box.y)},{_fmt_num(box.w)},{_fmt_num(box.h)},"
        f"{class_id},{score:.6f}\n"
    )


@dataclass(frozen=True)
class PredictedObject:
    box: Box
    cls: ObjectClass
    score: float


def parse_predictions(source) -> dict[tuple[str, int], list[PredictedObject]]:
    """Parse cascade output CSV back into per-frame prediction lists."""
    from .dataset import AnnotationParseError, _iter_lines

    frames: dict[tuple[str, int], list[PredictedObject]] = {}
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != 8:
            raise AnnotationParseError(line_no, f"expected 8 fields, got {len(fields)}")
        try:
            video_id = fields[0].strip()
            frame_index = int(fields[1])
            x, y, w, h = (float(v) for v in fields[2:6])
            class_id = int(fields[6])
            score = float(fields[7])
        except ValueError:
            raise AnnotationParseError(line_no, f"non-numeric field in {line!r}") from None
        obj = PredictedObject(Box(x, y, w, h), ObjectClass.from_id(class_id), score)
        frames.setdefault((video_id, frame_index), []).append(obj)
    return frames
