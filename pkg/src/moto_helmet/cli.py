"""Command-line front end: ground-truth validation, cascade runs,
prediction scoring, threshold sweeps, report re-emission, and synthetic
replay generation.

Exit codes follow a strict contract: 0 on success, 1 on runtime failure
(unreadable files, backend errors), 2 on usage errors (unknown flags,
malformed threshold lists). Diagnostics go to stderr; results go to the
requested output files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .cascade import (
    CascadeConfig,
    ConstantSeat,
    RemoteSeatClassifier,
    SeatClassifier,
    run_frame,
    write_cascade_csv,
    parse_predictions,
)
from .dataset import Role, compute_class_stats, load_annotations
from .dataset import FRAME_SIZE
from .detector import (
    DEFAULT_REMOTE_TIMEOUT,
    PROMPT_MOTORCYCLE,
    PROMPT_PERSON,
    DetectionRequest,
    FrameStore,
    NoiseConfig,
    RemoteBackend,
    SyntheticBackend,
    format_replay_record,
    frame_key,
)
from .geometry import ImageSize
from .metrics import precision_recall
from .sweep import (
    SweepConfig,
    TASK_CASCADE,
    TASK_HELMET,
    TASK_MOTORCYCLE,
    TASK_PERSON,
    TASKS,
    emit_pr_csv,
    emit_pr_svg,
    evaluate_predictions,
    load_table,
    run_sweep,
    save_manifest,
    save_table,
)

log = logging.getLogger(__name__)

REMOTE_TIMEOUT_ENV = "MOTO_HELMET_REMOTE_TIMEOUT"

_TASK_ALIASES = {
    "motorcycle": TASK_MOTORCYCLE,
    "person": TASK_PERSON,
    "helmet": TASK_HELMET,
    "cascade": TASK_CASCADE,
}


class UsageError(ValueError):
    """Bad invocation that argparse's own validation cannot catch."""


def parse_thresholds(text: str) -> tuple[float, ...]:
    """Parse `start:stop:step` (stop inclusive within 1e-9) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"expected start:stop:step, got {text!r}")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise UsageError(f"non-numeric threshold range {text!r}") from None
        if step <= 0:
            raise UsageError(f"step must be positive in {text!r}")
        if stop < start - 1e-9:
            raise UsageError(f"empty or descending range {text!r}")
        count = int((stop - start + 1e-9) / step) + 1
        values = tuple(round(start + i * step, 10) for i in range(count))
    else:
        try:
            values = tuple(float(p) for p in text.split(","))
        except ValueError:
            raise UsageError(f"non-numeric threshold list {text!r}") from None
    if not values:
        raise UsageError("no thresholds given")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise UsageError(f"threshold {v} outside [0,1]")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError("thresholds must be strictly increasing")
    return values


def _parse_size(text: str) -> ImageSize:
    try:
        w, h = text.lower().split("x")
        return ImageSize(int(w), int(h))
    except ValueError:
        raise UsageError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _parse_score_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"expected LO:HI score range, got {text!r}") from None
    return lo, hi


def _remote_timeout() -> float:
    raw = os.environ.get(REMOTE_TIMEOUT_ENV)
    if raw is None:
        return DEFAULT_REMOTE_TIMEOUT
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"{REMOTE_TIMEOUT_ENV} must be a number, got {raw!r}") from None


def _backend_spec(args) -> str:
    """Collapse the sugar flags and --backend into one `kind:arg` string."""
    specs = []
    if getattr(args, "backend", None):
        specs.append(args.backend)
    for kind in ("replay", "synth", "remote"):
        value = getattr(args, kind, None)
        if value:
            specs.append(f"{kind}:{value}")
    if len(specs) != 1:
        raise UsageError("exactly one backend is required (--backend, --replay, --synth or --remote)")
    return specs[0]


def make_backend(spec: str, annotations, cascade_cfg: CascadeConfig, frames_dir: str | None):
    kind, _, arg = spec.partition(":")
    if not arg:
        raise UsageError(f"backend spec {spec!r} is missing its argument")
    if kind == "replay":
        from .detector import replay_load

        with open(arg, "rb") as fh:
            return replay_load(fh)
    if kind == "synth":
        with open(arg, "r", encoding="utf-8") as fh:
            cfg = NoiseConfig.from_json(json.load(fh))
        return SyntheticBackend(
            annotations, cfg, cascade_cfg.frame_size, input_size=cascade_cfg.model_input_size
        )
    if kind == "remote":
        if frames_dir is None:
            raise UsageError("remote backend needs --frames DIR with the video frames")
        return RemoteBackend(
            arg,
            FrameStore(frames_dir),
            input_size=cascade_cfg.model_input_size,
            timeout=_remote_timeout(),
        )
    raise UsageError(f"unknown backend kind {kind!r} (expected replay, synth or remote)")


def make_seat_classifier(spec: str | None, frames_dir: str | None) -> SeatClassifier | None:
    if spec is None or spec == "none":
        return None
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        try:
            return ConstantSeat(Role(arg))
        except ValueError:
            raise UsageError(f"unknown seat role {arg!r}") from None
    if kind == "remote":
        if frames_dir is None:
            raise UsageError("remote seat classifier needs --frames DIR")
        return RemoteSeatClassifier(arg, FrameStore(frames_dir), timeout=_remote_timeout())
    raise UsageError(f"unknown seat classifier spec {spec!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moto-helmet",
        description="Cascaded motorcycle/rider/helmet detection pipeline and evaluation tools.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("validate", help="parse ground truth and print class statistics")
    p.add_argument("--gt", required=True, help="ground-truth annotation CSV")

    p = sub.add_parser("cascade", help="run the detection cascade over annotated frames")
    p.add_argument("--gt", required=True, help="annotation CSV naming the frames to process")
    _add_backend_flags(p)
    p.add_argument("--out", required=True, help="output predictions CSV")
    p.add_argument("--threshold", type=float, default=None,
                   help="one confidence threshold for all three stages")
    p.add_argument("--motorcycle-threshold", type=float, default=None)
    p.add_argument("--person-threshold", type=float, default=None)
    p.add_argument("--helmet-threshold", type=float, default=None)
    p.add_argument("--seat", default="none",
                   help="seat classifier: none, constant:<role> or remote:<url>")
    p.add_argument("--jobs", type=int, default=1, help="frames processed concurrently")

    p = sub.add_parser("eval", help="score a predictions CSV against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, help="cascade output CSV")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for a match")

    p = sub.add_parser("sweep", help="threshold sweep producing a PR table and curve")
    p.add_argument("--task", required=True,
                   help="one of " + ", ".join(sorted(_TASK_ALIASES)) + " (or full task ids)")
    p.add_argument("--gt", required=True)
    _add_backend_flags(p)
    p.add_argument("--thresholds", required=True,
                   help="start:stop:step (stop inclusive) or comma-separated list")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--seat", default="none")
    p.add_argument("--jobs", type=int, default=1, help="videos evaluated concurrently")

    p = sub.add_parser("report", help="re-emit CSV/SVG from a saved sweep table")
    p.add_argument("--table", required=True, help="table.json written by sweep")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic replay file from ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="output replay JSONL")
    p.add_argument("--drop", type=float, default=0.0, help="per-object drop probability")
    p.add_argument("--spurious", type=float, default=0.0, help="mean false boxes per frame")
    p.add_argument("--jitter", type=float, default=0.0, help="stddev of box edge noise, px")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tp-score", default="1.0:1.0", help="score range LO:HI for kept objects")
    p.add_argument("--fp-score", default="0.0:1.0", help="score range LO:HI for false boxes")
    p.add_argument("--input-size", default="960x960",
                   help="coordinate scale replayed answers are expressed in")

    return parser


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", help="backend spec: replay:<path>, synth:<cfg.json> or remote:<url>")
    p.add_argument("--replay", help="shorthand for --backend replay:<path>")
    p.add_argument("--synth", help="shorthand for --backend synth:<cfg.json>")
    p.add_argument("--remote", help="shorthand for --backend remote:<url>")
    p.add_argument("--frames", help="directory of video frames (remote backend only)")


def parse_args(argv=None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


# --------------------------------------------------------------------------
# Verb implementations
# --------------------------------------------------------------------------


def _cmd_validate(args) -> int:
    frames = load_annotations(args.gt)
    stats = compute_class_stats(frames)
    rows = [
        ("Driver", stats.driver),
        ("Passenger 1", stats.passenger1),
        ("Passenger 2", stats.passenger2),
        ("Child Passenger", stats.child),
        ("Total", stats.total_people),
        ("Helmeted", stats.helmeted),
        ("Unhelmeted", stats.unhelmeted),
    ]
    print(f"{'Class':<16} {'Frequency':>9}")
    for label, count in rows:
        print(f"{label:<16} {count:>9}")
    return 0


def _cascade_config(args) -> CascadeConfig:
    cfg = CascadeConfig()
    if args.threshold is not None:
        cfg = cfg.with_threshold(args.threshold)
    overrides = {}
    for name in ("motorcycle_threshold", "person_threshold", "helmet_threshold"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    return replace(cfg, **overrides) if overrides else cfg


def _cmd_cascade(args) -> int:
    frames = load_annotations(args.gt)
    cfg = _cascade_config(args)
    backend = make_backend(_backend_spec(args), frames, cfg, args.frames)
    seat = make_seat_classifier(args.seat, args.frames)

    def one(frame):
        return run_frame(frame.video_id, frame.frame_index, backend, seat, cfg)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outputs = list(pool.map(one, frames))
    else:
        outputs = [one(f) for f in frames]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        write_cascade_csv(outputs, fh)
    return 0


def _cmd_eval(args) -> int:
    frames = load_annotations(args.gt)
    with open(args.pred, "rb") as fh:
        predictions = parse_predictions(fh)
    counts = evaluate_predictions(predictions, frames, args.iou)
    precision, recall = precision_recall(counts.tp, counts.fp, counts.fn)
    print(f"tp={counts.tp} fp={counts.fp} fn={counts.fn}")
    print(f"precision={'undefined' if precision is None else f'{precision:.4f}'}")
    print(f"recall={'undefined' if recall is None else f'{recall:.4f}'}")
    return 0


def _resolve_task(name: str) -> str:
    task = _TASK_ALIASES.get(name, name)
    if task not in TASKS:
        raise UsageError(f"unknown task {name!r}")
    return task


def _emit_reports(table, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "pr.csv", "w", encoding="utf-8", newline="\n") as fh:
        emit_pr_csv(table, fh)
    if any(row.defined for row in table.rows):
        with open(out_dir / "pr.svg", "w", encoding="utf-8", newline="\n") as fh:
            emit_pr_svg(table, fh)
    else:
        log.warning("no defined PR points, skipping pr.svg")


def _cmd_sweep(args) -> int:
    frames = load_annotations(args.gt)
    spec = _backend_spec(args)
    cascade_cfg = CascadeConfig()
    cfg = SweepConfig(
        task=_resolve_task(args.task),
        thresholds=parse_thresholds(args.thresholds),
        iou_threshold=args.iou,
        backend=spec,
        out_dir=args.out,
        jobs=args.jobs,
        cascade=cascade_cfg,
    )
    backend = make_backend(spec, frames, cascade_cfg, args.frames)
    seat = make_seat_classifier(args.seat, args.frames)
    table = run_sweep(cfg, frames, backend, seat)

    out_dir = Path(args.out)
    _emit_reports(table, out_dir)
    save_table(table, out_dir / "table.json")
    save_manifest(table, out_dir / "manifest.json")
    return 0


def _cmd_report(args) -> int:
    table = load_table(args.table)
    _emit_reports(table, Path(args.out))
    return 0


def _cmd_synth(args) -> int:
    frames = load_annotations(args.gt)
    cfg = NoiseConfig(
        drop_rate=args.drop,
        spurious_rate=args.spurious,
        jitter_sigma=args.jitter,
        tp_score=_parse_score_range(args.tp_score),
        fp_score=_parse_score_range(args.fp_score),
        seed=args.seed,
    )
    backend = SyntheticBackend(frames, cfg, FRAME_SIZE, input_size=_parse_size(args.input_size))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for frame in frames:
            key = frame_key(frame.video_id, frame.frame_index)
            for prompt in (PROMPT_MOTORCYCLE, PROMPT_PERSON):
                dets = backend.detect(DetectionRequest(key, prompt, 0.0))
                fh.write(format_replay_record(key, prompt, dets))
    return 0


_VERBS = {
    "validate": _cmd_validate,
    "cascade": _cmd_cascade,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "synth": _cmd_synth,
}


def execute(args: argparse.Namespace) -> int:
    return _VERBS[args.verb](args)


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return execute(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
