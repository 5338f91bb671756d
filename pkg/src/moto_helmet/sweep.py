"""Threshold sweeps over the detection and classification tasks, with PR
table/graphic emission and resumable per-video checkpoints.

A sweep runs one task at each configured threshold over every annotated
frame, micro-aggregates true/false positive and false negative counts, and
turns each threshold into one precision/recall row. Thresholds run
sequentially; the videos inside a threshold may run concurrently. Every
finished video writes a small counts checkpoint, so a sweep killed halfway
resumes without repeating backend work.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Sequence
from urllib.parse import quote

from .cascade import (
    CascadeConfig,
    SeatClassifier,
    classify_helmet_on_gt,
    run_frame,
)
from .dataset import (
    MOTORCYCLE_CLASS_ID,
    PERSON_CLASS_IDS,
    FrameAnnotation,
    GTObject,
    serialize_annotations,
)
from .detector import (
    PROMPT_MOTORCYCLE,
    PROMPT_PERSON,
    DetectionRequest,
    DetectorBackend,
    ScoredDetection,
)
from .geometry import FRAME, Box, rescale_box
from .metrics import (
    DEFAULT_IOU_THRESHOLD,
    MatchResult,
    PRPoint,
    average_precision,
    binary_counts,
    match_detections,
    precision_recall,
)

log = logging.getLogger(__name__)

TASK_MOTORCYCLE = "motorcycle-detection"
TASK_PERSON = "person-detection"
TASK_HELMET = "helmet-classification-on-gt"
TASK_CASCADE = "cascade-full"
TASKS = (TASK_MOTORCYCLE, TASK_PERSON, TASK_HELMET, TASK_CASCADE)


@dataclass(frozen=True)
class SweepConfig:
    task: str
    thresholds: tuple[float, ...]
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    backend: str = "custom"
    out_dir: str | None = None
    jobs: int = 1
    cascade: CascadeConfig = CascadeConfig()

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {', '.join(TASKS)}")
        for t in self.thresholds:
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"threshold {t} outside [0,1]")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in (0,1], got {self.iou_threshold}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class SweepTable:
    task: str
    rows: tuple[PRPoint, ...]
    ap: float | None
    manifest: dict


def input_digest(frames: Iterable[FrameAnnotation]) -> str:
    payload = serialize_annotations(frames).encode("utf-8")
    return "sha256:" + hashlib.sha256(payload).hexdigest()


# --------------------------------------------------------------------------
# Per-frame task evaluation
# --------------------------------------------------------------------------


def class_exact_counts(
    predictions: Sequence[tuple[Box, int, float]],
    gts: Sequence[GTObject],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MatchResult:
    """Greedy matching where a prediction may only claim GT of its own class."""
    class_ids = sorted({c for _, c, _ in predictions} | {o.cls.id for o in gts})
    total = MatchResult()
    for cid in class_ids:
        dets = [ScoredDetection(b, s, str(cid)) for b, c, s in predictions if c == cid]
        boxes = [o.box for o in gts if o.cls.id == cid]
        total = total + match_detections(dets, boxes, iou_threshold)
    return total


def _frame_counts(
    task: str,
    frame: FrameAnnotation,
    backend: DetectorBackend,
    threshold: float,
    iou_threshold: float,
    cascade_cfg: CascadeConfig,
    seat_classifier: SeatClassifier | None,
) -> MatchResult:
    video_id, frame_index = frame.video_id, frame.frame_index

    if task == TASK_MOTORCYCLE:
        from .detector import frame_key

        raw = backend.detect(
            DetectionRequest(frame_key(video_id, frame_index), PROMPT_MOTORCYCLE, threshold)
        )
        dets = [
            ScoredDetection(
                rescale_box(d.box, cascade_cfg.model_input_size, cascade_cfg.frame_size, space=FRAME),
                d.score,
                d.prompt,
            )
            for d in raw
        ]
        gts = [o.box for o in frame.objects if o.cls.id == MOTORCYCLE_CLASS_ID]
        return match_detections(dets, gts, iou_threshold)

    if task == TASK_PERSON:
        cfg = replace(
            cascade_cfg, motorcycle_threshold=threshold, person_threshold=threshold
        )
        out = run_frame(video_id, frame_index, backend, None, cfg, attributes=False)
        dets = [ScoredDetection(r.person_box, r.person_score, PROMPT_PERSON) for r in out.riders]
        gts = [o.box for o in frame.objects if o.cls.id in PERSON_CLASS_IDS]
        return match_detections(dets, gts, iou_threshold)

    if task == TASK_HELMET:
        persons = [o for o in frame.objects if o.cls.id in PERSON_CLASS_IDS]
        predicted = classify_helmet_on_gt(
            video_id,
            frame_index,
            [o.box for o in persons],
            backend,
            threshold,
            cascade_cfg.frame_size,
        )
        tp, fp, fn = binary_counts(predicted, [bool(o.cls.helmet) for o in persons])
        return MatchResult(tp, fp, fn)

    if task == TASK_CASCADE:
        out = run_frame(video_id, frame_index, backend, seat_classifier, cascade_cfg.with_threshold(threshold))
        predictions: list[tuple[Box, int, float]] = [
            (m.box, MOTORCYCLE_CLASS_ID, m.score) for m in out.motorcycles
        ]
        unclassified = 0
        for rider in out.riders:
            if rider.composite is None:
                unclassified += 1
                continue
            predictions.append((rider.person_box, rider.composite.id, rider.person_score))
        if unclassified:
            log.warning(
                "%s/%d: %d rider(s) without a seat role excluded from scoring",
                video_id, frame_index, unclassified,
            )
        return class_exact_counts(predictions, list(frame.objects), iou_threshold)

    raise ValueError(f"unknown task {task!r}")


def _video_counts(
    cfg: SweepConfig,
    frames: Sequence[FrameAnnotation],
    backend: DetectorBackend,
    threshold: float,
    seat_classifier: SeatClassifier | None,
) -> MatchResult:
    total = MatchResult()
    for frame in frames:
        total = total + _frame_counts(
            cfg.task, frame, backend, threshold, cfg.iou_threshold, cfg.cascade, seat_classifier
        )
    return total


# --------------------------------------------------------------------------
# Checkpointing
# --------------------------------------------------------------------------


def _checkpoint_path(out_dir: str, task: str, threshold: float, video_id: str) -> Path:
    return (
        Path(out_dir)
        / "checkpoints"
        / task
        / f"t{threshold:.6f}"
        / f"{quote(video_id, safe='')}.json"
    )


def _load_checkpoint(path: Path) -> MatchResult | None:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return MatchResult(int(data["tp"]), int(data["fp"]), int(data["fn"]))
    except FileNotFoundError:
        return None
    except (ValueError, KeyError, TypeError) as e:
        log.warning("ignoring unreadable checkpoint %s (%s)", path, e)
        return None


def _save_checkpoint(path: Path, counts: MatchResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump({"tp": counts.tp, "fp": counts.fp, "fn": counts.fn}, fh)
        fh.write("\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# The sweep itself
# --------------------------------------------------------------------------


def run_sweep(
    cfg: SweepConfig,
    annotations: Sequence[FrameAnnotation],
    backend: DetectorBackend,
    seat_classifier: SeatClassifier | None = None,
) -> SweepTable:
    """Evaluate ``cfg.task`` at every threshold and assemble the PR table.

    A backend failure propagates after the already-finished videos have
    checkpointed, so the rerun picks up where this one died.
    """
    manifest = {
        "task": cfg.task,
        "thresholds": list(cfg.thresholds),
        "iou_threshold": cfg.iou_threshold,
        "backend": cfg.backend,
        "input_digest": input_digest(annotations),
        "started_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }

    by_video: dict[str, list[FrameAnnotation]] = {}
    for frame in annotations:
        by_video.setdefault(frame.video_id, []).append(frame)

    rows: list[PRPoint] = []
    for threshold in cfg.thresholds:
        total = MatchResult()
        for video_id, counts in _threshold_pass(cfg, by_video, backend, threshold, seat_classifier):
            total = total + counts
        precision, recall = precision_recall(total.tp, total.fp, total.fn)
        rows.append(PRPoint(threshold, precision, recall))

    try:
        ap = average_precision(rows)
    except ValueError as e:
        log.warning("AP undefined for this sweep: %s", e)
        ap = None
    return SweepTable(cfg.task, tuple(rows), ap, manifest)


def _threshold_pass(
    cfg: SweepConfig,
    by_video: dict[str, list[FrameAnnotation]],
    backend: DetectorBackend,
    threshold: float,
    seat_classifier: SeatClassifier | None,
) -> list[tuple[str, MatchResult]]:
    def one_video(video_id: str) -> tuple[str, MatchResult]:
        if cfg.out_dir is not None:
            path = _checkpoint_path(cfg.out_dir, cfg.task, threshold, video_id)
            cached = _load_checkpoint(path)
            if cached is not None:
                return video_id, cached
        counts = _video_counts(cfg, by_video[video_id], backend, threshold, seat_classifier)
        if cfg.out_dir is not None:
            _save_checkpoint(path, counts)
        return video_id, counts

    videos = list(by_video)
    if cfg.jobs <= 1 or len(videos) <= 1:
        return [one_video(v) for v in videos]

    results: dict[str, MatchResult] = {}
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        futures = {pool.submit(one_video, v): v for v in videos}
        try:
            for future in as_completed(futures):
                video_id, counts = future.result()
                results[video_id] = counts
        except BaseException:
            for future in futures:
                future.cancel()
            raise
    return [(v, results[v]) for v in videos]


# --------------------------------------------------------------------------
# Evaluation of serialized predictions against ground truth
# --------------------------------------------------------------------------


def evaluate_predictions(
    predictions: dict[tuple[str, int], list],
    annotations: Sequence[FrameAnnotation],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MatchResult:
    """Class-exact micro counts of prediction rows against annotated frames.

    Predicted frames missing from the annotations contribute pure false
    positives; annotated frames with no predictions contribute misses.
    """
    gt_by_frame = {(f.video_id, f.frame_index): list(f.objects) for f in annotations}
    total = MatchResult()
    seen = set()
    for frame_id, preds in predictions.items():
        seen.add(frame_id)
        rows = [(p.box, p.cls.id, p.score) for p in preds]
        total = total + class_exact_counts(rows, gt_by_frame.get(frame_id, []), iou_threshold)
    for frame_id, objects in gt_by_frame.items():
        if frame_id not in seen:
            total = total + MatchResult(fn=len(objects))
    return total


# --------------------------------------------------------------------------
# Emitters
# --------------------------------------------------------------------------


def _fmt_cell(value: float | None) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def emit_pr_csv(table: SweepTable, sink: IO[str]) -> int:
    """Fixed-format PR table: 4-decimal cells, LF endings, AP trailer."""
    written = sink.write("threshold,precision,recall\n")
    for row in table.rows:
        written += sink.write(
            f"{row.threshold:.4f},{_fmt_cell(row.precision)},{_fmt_cell(row.recall)}\n"
        )
    ap_cell = "undefined" if table.ap is None else f"{table.ap:.6f}"
    written += sink.write(f"# ap={ap_cell}\n")
    return written


def parse_pr_csv(text: str) -> tuple[tuple[PRPoint, ...], float | None]:
    """Read back what :func:`emit_pr_csv` wrote."""
    rows: list[PRPoint] = []
    ap: float | None = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("# ap="):
            value = line[len("# ap="):]
            ap = None if value == "undefined" else float(value)
            continue
        if line.startswith("#") or line == "threshold,precision,recall":
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise ValueError(f"line {line_no}: expected 3 fields, got {len(fields)}")
        cells = [None if f == "undefined" else float(f) for f in fields]
        if cells[0] is None:
            raise ValueError(f"line {line_no}: threshold cannot be undefined")
        rows.append(PRPoint(cells[0], cells[1], cells[2]))
    return tuple(rows), ap


_SVG_WIDTH = 640
_SVG_HEIGHT = 480
_SVG_MARGIN = 56


def emit_pr_svg(table: SweepTable, sink: IO[str]) -> int:
    """Standalone PR-curve graphic: recall on x, precision on y, both [0,1].

    Output is a deterministic function of the table, so repeated emission
    is byte-identical.
    """
    points = [p for p in table.rows if p.defined]
    if not points:
        raise ValueError("no defined precision/recall points to plot")
    points.sort(key=lambda p: p.recall)

    plot_w = _SVG_WIDTH - 2 * _SVG_MARGIN
    plot_h = _SVG_HEIGHT - 2 * _SVG_MARGIN

    def px(recall: float) -> float:
        return _SVG_MARGIN + recall * plot_w

    def py(precision: float) -> float:
        return _SVG_MARGIN + (1.0 - precision) * plot_h

    ap = table.ap if table.ap is not None else average_precision(points)
    title = f"{table.task} precision-recall (AP={ap:.4f})"

    parts: list[str] = []
    parts.append('<?xml version="1.0" encoding="UTF-8"?>\n')
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_WIDTH}" '
        f'height="{_SVG_HEIGHT}" viewBox="0 0 {_SVG_WIDTH} {_SVG_HEIGHT}">\n'
    )
    parts.append(f"<title>{title}</title>\n")
    parts.append(f'<rect width="{_SVG_WIDTH}" height="{_SVG_HEIGHT}" fill="white"/>\n')
    parts.append(
        f'<text x="{_SVG_WIDTH / 2:.1f}" y="28" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>\n'
    )
    # Axes with ticks every 0.2 on both scales.
    parts.append(
        f'<rect x="{_SVG_MARGIN}" y="{_SVG_MARGIN}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>\n'
    )
    for i in range(6):
        v = i / 5.0
        x = px(v)
        y = py(v)
        parts.append(
            f'<line x1="{x:.1f}" y1="{_SVG_MARGIN + plot_h}" x2="{x:.1f}" '
            f'y2="{_SVG_MARGIN + plot_h + 5}" stroke="black"/>\n'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{_SVG_MARGIN + plot_h + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{v:.1f}</text>\n'
        )
        parts.append(
            f'<line x1="{_SVG_MARGIN - 5}" y1="{y:.1f}" x2="{_SVG_MARGIN}" '
            f'y2="{y:.1f}" stroke="black"/>\n'
        )
        parts.append(
            f'<text x="{_SVG_MARGIN - 9}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{v:.1f}</text>\n'
        )
    parts.append(
        f'<text x="{_SVG_WIDTH / 2:.1f}" y="{_SVG_HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">recall</text>\n'
    )
    parts.append(
        f'<text x="16" y="{_SVG_HEIGHT / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14" '
        f'transform="rotate(-90 16 {_SVG_HEIGHT / 2:.1f})">precision</text>\n'
    )
    if len(points) > 1:
        coords = " ".join(f"{px(p.recall):.2f},{py(p.precision):.2f}" for p in points)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="#1f77b4" stroke-width="2"/>\n')
    for p in points:
        parts.append(
            f'<circle cx="{px(p.recall):.2f}" cy="{py(p.precision):.2f}" r="4" fill="#1f77b4"/>\n'
        )
    parts.append("</svg>\n")
    return sink.write("".join(parts))


# --------------------------------------------------------------------------
# Table persistence (used by the report command)
# --------------------------------------------------------------------------


def save_table(table: SweepTable, path) -> None:
    data = {
        "task": table.task,
        "rows": [
            {"threshold": r.threshold, "precision": r.precision, "recall": r.recall}
            for r in table.rows
        ],
        "ap": table.ap,
        "manifest": table.manifest,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_table(path) -> SweepTable:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    rows = tuple(
        PRPoint(r["threshold"], r["precision"], r["recall"]) for r in data["rows"]
    )
    return SweepTable(data["task"], rows, data["ap"], data["manifest"])


def save_manifest(table: SweepTable, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
