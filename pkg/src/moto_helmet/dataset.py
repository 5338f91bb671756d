"""Nine-class rider taxonomy, annotation file ingestion and class statistics.

The label scheme combines a seat role with a helmet attribute:

====  ===========  ======
 id   role         helmet
====  ===========  ======
 1    motorcycle   n/a
 2    driver       yes
 3    driver       no
 4    passenger1   yes
 5    passenger1   no
 6    passenger2   yes
 7    passenger2   no
 8    child        yes
 9    child        no
====  ===========  ======

Even person ids are helmeted; that parity rule is encoded once here and
every other module goes through it.

Annotation wire format (UTF-8, LF endings, ``#`` comments)::

    video_id,frame,bb_left,bb_top,bb_width,bb_height,class

one object per line; objects are grouped by (video_id, frame) preserving
file order.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Iterator, Sequence

from .geometry import Box, ImageSize, clamp_box

log = logging.getLogger(__name__)

# Challenge footage resolution; annotations are clamped against it at load.
FRAME_SIZE = ImageSize(1920, 1080)

# 20 s of video sampled at 10 Hz.
MAX_FRAMES_PER_VIDEO = 200


class Role(Enum):
    MOTORCYCLE = "motorcycle"
    DRIVER = "driver"
    PASSENGER1 = "passenger1"
    PASSENGER2 = "passenger2"
    CHILD = "child"


PERSON_ROLES = (Role.DRIVER, Role.PASSENGER1, Role.PASSENGER2, Role.CHILD)

MOTORCYCLE_CLASS_ID = 1
PERSON_CLASS_IDS = frozenset(range(2, 10))

_ID_TO_ROLE_HELMET: dict[int, tuple[Role, bool | None]] = {
    1: (Role.MOTORCYCLE, None),
    2: (Role.DRIVER, True),
    3: (Role.DRIVER, False),
    4: (Role.PASSENGER1, True),
    5: (Role.PASSENGER1, False),
    6: (Role.PASSENGER2, True),
    7: (Role.PASSENGER2, False),
    8: (Role.CHILD, True),
    9: (Role.CHILD, False),
}


def class_decompose(class_id: int) -> tuple[Role, bool | None]:
    """Split a class id into (role, helmet); helmet is None for motorcycles."""
    try:
        return _ID_TO_ROLE_HELMET[class_id]
    except KeyError:
        raise ValueError(f"class id out of range 1-9: {class_id}") from None


@dataclass(frozen=True)
class ObjectClass:
    id: int
    role: Role
    helmet: bool | None

    @classmethod
    def from_id(cls, class_id: int) -> "ObjectClass":
        role, helmet = class_decompose(class_id)
        return cls(class_id, role, helmet)


@dataclass(frozen=True)
class GTObject:
    box: Box
    cls: ObjectClass


@dataclass(frozen=True)
class FrameAnnotation:
    video_id: str
    frame_index: int
    objects: tuple[GTObject, ...]


class AnnotationParseError(ValueError):
    """Raised on malformed annotation input; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _iter_lines(source: IO[bytes] | IO[str] | bytes | str) -> Iterator[str]:
    if isinstance(source, bytes):
        yield from io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        yield from io.StringIO(source)
    else:
        for raw in source:
            yield raw.decode("utf-8") if isinstance(raw, bytes) else raw


def parse_annotations(
    source: IO[bytes] | IO[str] | bytes | str,
    frame_size: ImageSize = FRAME_SIZE,
    clamp: bool = True,
) -> list[FrameAnnotation]:
    """Parse annotation CSV into per-frame groups, preserving file order.

    Out-of-bounds boxes are clamped with a warning rather than rejected;
    annotated boxes are known to spill past the frame when riders enter
    the shot. Malformed lines raise :class:`AnnotationParseError`.
    """
    groups: dict[tuple[str, int], list[GTObject]] = {}
    clamped = 0
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise AnnotationParseError(line_no, f"expected 7 fields, got {len(fields)}")
        video_id = fields[0].strip()
        if not video_id:
            raise AnnotationParseError(line_no, "empty video id")
        try:
            frame_index = int(fields[1])
            x, y, w, h = (float(v) for v in fields[2:6])
            class_id = int(fields[6])
        except ValueError:
            raise AnnotationParseError(line_no, f"non-numeric field in {line!r}") from None
        if frame_index < 0:
            raise AnnotationParseError(line_no, f"negative frame index {frame_index}")
        if w < 0 or h < 0:
            raise AnnotationParseError(line_no, f"negative box dimensions {w}x{h}")
        if class_id not in _ID_TO_ROLE_HELMET:
            raise AnnotationParseError(line_no, f"class out of range 1-9: {class_id}")
        if frame_index >= MAX_FRAMES_PER_VIDEO:
            log.warning("line %d: frame index %d beyond expected %d-frame videos",
                        line_no, frame_index, MAX_FRAMES_PER_VIDEO)
        box = Box(x, y, w, h)
        if clamp and (x < 0 or y < 0 or box.right > frame_size.width or box.bottom > frame_size.height):
            box = clamp_box(box, frame_size)
            clamped += 1
        obj = GTObject(box, ObjectClass.from_id(class_id))
        groups.setdefault((video_id, frame_index), []).append(obj)
    if clamped:
        log.warning("clamped %d out-of-bounds ground-truth boxes to %s", clamped, frame_size)
    return [
        FrameAnnotation(video_id, frame_index, tuple(objs))
        for (video_id, frame_index), objs in groups.items()
    ]


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def serialize_annotations(frames: Iterable[FrameAnnotation]) -> str:
    """Inverse of :func:`parse_annotations`, modulo comments and whitespace."""
    lines = []
    for frame in frames:
        for obj in frame.objects:
            b = obj.box
            lines.append(
                f"{frame.video_id},{frame.frame_index},"
                f"{_fmt_num(b.x)},{_fmt_num(b.y)},{_fmt_num(b.w)},{_fmt_num(b.h)},{obj.cls.id}"
            )
    return "\n".join(lines) + ("\n" if lines else "")


def load_annotations(path, **kwargs) -> list[FrameAnnotation]:
    with open(path, "rb") as fh:
        return parse_annotations(fh, **kwargs)


@dataclass(frozen=True)
class ClassStats:
    """Person counts by seat role, plus the helmet split."""

    driver: int = 0
    passenger1: int = 0
    passenger2: int = 0
    child: int = 0
    helmeted: int = 0
    unhelmeted: int = 0

    @property
    def total_people(self) -> int:
        return self.driver + self.passenger1 + self.passenger2 + self.child

    def role_counts(self) -> tuple[int, int, int, int]:
        return (self.driver, self.passenger1, self.passenger2, self.child)

    def __add__(self, other: "ClassStats") -> "ClassStats":
        return ClassStats(
            self.driver + other.driver,
            self.passenger1 + other.passenger1,
            self.passenger2 + other.passenger2,
            self.child + other.child,
            self.helmeted + other.helmeted,
            self.unhelmeted + other.unhelmeted,
        )


def compute_class_stats(frames: Iterable[FrameAnnotation]) -> ClassStats:
    """Count annotated people by role and helmet status (motorcycles excluded)."""
    by_role = {role: 0 for role in PERSON_ROLES}
    helmeted = 0
    unhelmeted = 0
    for frame in frames:
        for obj in frame.objects:
            if obj.cls.role is Role.MOTORCYCLE:
                continue
            by_role[obj.cls.role] += 1
            if obj.cls.helmet:
                helmeted += 1
            else:
                unhelmeted += 1
    return ClassStats(
        driver=by_role[Role.DRIVER],
        passenger1=by_role[Role.PASSENGER1],
        passenger2=by_role[Role.PASSENGER2],
        child=by_role[Role.CHILD],
        helmeted=helmeted,
        unhelmeted=unhelmeted,
    )


def inverse_class_weights(stats: ClassStats) -> tuple[float, float, float, float]:
    """Per-role weights total_people / count_role, ordered driver..child.

    A zero count leaves the weight undefined and raises.
    """
    total = stats.total_people
    counts = stats.role_counts()
    for role, count in zip(PERSON_ROLES, counts):
        if count <= 0:
            raise ValueError(f"inverse weight undefined: no {role.value} instances")
    return tuple(total / c for c in counts)  # type: ignore[return-value]


def resolve_class_weights(
    stats: ClassStats | None,
    manual: Sequence[float] | None = None,
) -> tuple[float, float, float, float]:
    """Manual override wins verbatim; otherwise inverse weights from stats."""
    if manual is not None:
        if len(manual) != 4:
            raise ValueError(f"expected 4 class weights, got {len(manual)}")
        return tuple(float(w) for w in manual)  # type: ignore[return-value]
    if stats is None:
        raise ValueError("need stats or a manual weight override")
    return inverse_class_weights(stats)
