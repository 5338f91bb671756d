"""Evaluation mathematics: greedy IoU matching, precision/recall, trapezoidal
average precision, the always-helmeted baseline, and the 4-role confusion
matrix.

Counts aggregate micro-style: true/false positives and false negatives are
summed over all frames and videos first, and a single precision/recall pair
is computed per threshold afterwards. All operations are pure; per-frame
:class:`MatchResult` values merge by count addition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import PERSON_ROLES, Role
from .detector import ScoredDetection
from .geometry import Box, iou

log = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one detection set against one ground-truth set.

    ``matched_pairs`` holds (detection index, gt index, iou) triples; adding
    two results sums the counts and drops the pairs, whose indices are only
    meaningful within a single frame.
    """

    tp: int = 0
    fp: int = 0
    fn: int = 0
    matched_pairs: tuple[tuple[int, int, float], ...] = ()

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def match_detections(
    detections: Sequence[ScoredDetection],
    gts: Sequence[Box],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MatchResult:
    """Greedy score-ordered assignment of detections to ground truth.

    Detections are visited in descending score (ties by input order); each
    takes the still-unmatched GT with the highest IoU, provided that IoU
    meets the threshold. Each GT matches at most once.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    taken = [False] * len(gts)
    pairs: list[tuple[int, int, float]] = []
    for det_idx in order:
        det_box = detections[det_idx].box
        best_gt = -1
        best_iou = 0.0
        for gt_idx, gt_box in enumerate(gts):
            if taken[gt_idx]:
                continue
            overlap = iou(det_box, gt_box)
            if overlap > best_iou:
                best_iou = overlap
                best_gt = gt_idx
        if best_gt >= 0 and best_iou >= iou_threshold:
            taken[best_gt] = True
            pairs.append((det_idx, best_gt, best_iou))
    tp = len(pairs)
    return MatchResult(
        tp=tp,
        fp=len(detections) - tp,
        fn=len(gts) - tp,
        matched_pairs=tuple(sorted(pairs)),
    )


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float | None, float | None]:
    """(precision, recall); a side with no support is None, never silently 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float | None
    recall: float | None

    @property
    def defined(self) -> bool:
        return self.precision is not None and self.recall is not None


def average_precision(points: Iterable[PRPoint]) -> float:
    """Area under the PR curve by trapezoid over the measured points.

    Points are sorted by recall (stable); undefined points are dropped with
    a warning. No extrapolation to recall 0 or 1, no precision
    monotonization; a single point has zero width and yields 0.
    """
    pts = list(points)
    defined = [p for p in pts if p.defined]
    if len(defined) < len(pts):
        log.warning("average_precision: dropped %d undefined point(s)", len(pts) - len(defined))
    if not defined:
        raise ValueError("average_precision: no defined precision/recall points")
    defined.sort(key=lambda p: p.recall)  # type: ignore[arg-type, return-value]
    area = 0.0
    for a, b in zip(defined, defined[1:]):
        area += (b.recall - a.recall) * (a.precision + b.precision) / 2.0  # type: ignore[operator]
    return area


def naive_helmet_baseline(stats) -> PRPoint:
    """The always-predict-helmeted classifier: precision is the helmeted
    fraction, recall is trivially 1."""
    total = stats.total_people
    if total <= 0:
        raise ValueError("baseline undefined without people")
    return PRPoint(threshold=0.0, precision=stats.helmeted / total, recall=1.0)


def binary_counts(predicted: Sequence[bool], actual: Sequence[bool]) -> tuple[int, int, int]:
    """(tp, fp, fn) for aligned boolean predictions, positive class = True."""
    if len(predicted) != len(actual):
        raise ValueError(f"length mismatch: {len(predicted)} predictions vs {len(actual)} labels")
    tp = fp = fn = 0
    for pred, act in zip(predicted, actual):
        if pred and act:
            tp += 1
        elif pred and not act:
            fp += 1
        elif not pred and act:
            fn += 1
    return tp, fp, fn


def binary_classification_pr(
    predicted: Sequence[bool], actual: Sequence[bool], threshold: float = 0.0
) -> PRPoint:
    """PR of aligned boolean predictions; ``threshold`` only labels the point."""
    precision, recall = precision_recall(*binary_counts(predicted, actual))
    return PRPoint(threshold, precision, recall)


class ConfusionMatrix4:
    """4x4 confusion counts; rows are ground-truth seat roles, columns
    predictions, ordered driver, passenger1, passenger2, child."""

    ROLES = PERSON_ROLES

    def __init__(self, counts: np.ndarray | None = None):
        if counts is None:
            counts = np.zeros((4, 4), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (4, 4) or (counts < 0).any():
            raise ValueError("confusion matrix must be 4x4 non-negative counts")
        self.counts = counts

    def _index(self, role: Role) -> int:
        try:
            return self.ROLES.index(role)
        except ValueError:
            raise ValueError(f"{role} is not a person seat role") from None

    def add(self, gt_role: Role, predicted_role: Role, n: int = 1) -> "ConfusionMatrix4":
        self.counts[self._index(gt_role), self._index(predicted_role)] += n
        return self

    def accuracy(self) -> float | None:
        total = int(self.counts.sum())
        if total == 0:
            return None
        return float(np.trace(self.counts)) / total

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix4) and bool((self.counts == other.counts).all())

    def __repr__(self) -> str:
        return f"ConfusionMatrix4({self.counts.tolist()})"
