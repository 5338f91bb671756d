"""Axis-aligned box arithmetic in named pixel coordinate spaces.

Boxes are stored as (left, top, width, height) with continuous values and a
space tag. Three kinds of spaces exist:

* ``frame``: the original video frame (typically 1920x1080),
* ``model-input``: the frame resized to the detector's input resolution,
* ``crop@L,T``: a crop of the frame whose top-left corner sits at frame
  pixel (L, T); coordinates are local to the crop.

All functions are pure; values are immutable and safe to share across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

FRAME = "frame"
MODEL_INPUT = "model-input"


def crop_space(left: int, top: int) -> str:
    """Space tag for a crop anchored at frame pixel (left, top)."""
    return f"crop@{left},{top}"


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle: left edge, top edge, width, height."""

    x: float
    y: float
    w: float
    h: float
    space: str = FRAME

    def __post_init__(self) -> None:
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box dimensions must be non-negative, got w={self.w} h={self.h}")

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Margins:
    """Per-side expansion margins in pixels; all non-negative."""

    left: float = 0.0
    right: float = 0.0
    top: float = 0.0
    bottom: float = 0.0

    def __post_init__(self) -> None:
        if min(self.left, self.right, self.top, self.bottom) < 0:
            raise ValueError("margins must be non-negative")


# Cascade default: widen left/right/top to catch riders leaning out of the
# motorcycle box; the bottom stays put.
CASCADE_MARGINS = Margins(left=50.0, right=50.0, top=50.0, bottom=0.0)


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area of two boxes in the same space.

    Degenerate (zero-area) boxes are legal and score 0 against anything,
    including each other.
    """
    if a.space != b.space:
        raise ValueError(f"IoU across coordinate spaces: {a.space!r} vs {b.space!r}")
    ix = max(a.x, b.x)
    iy = max(a.y, b.y)
    iw = min(a.right, b.right) - ix
    ih = min(a.bottom, b.bottom) - iy
    if iw <= 0 or ih <= 0:
        inter = 0.0
    else:
        inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    # Recomputing edges from x+w can differ from w in the last ulp, which
    # would push self-IoU above 1; clamp to the mathematical range.
    return min(1.0, inter / union)


def expand_box(b: Box, margins: Margins, bounds: ImageSize) -> Box:
    """Grow ``b`` by per-side margins and clamp the result to ``bounds``.

    Clamping happens once, after expansion; a box already touching an edge
    simply stops there.
    """
    left = max(0.0, b.x - margins.left)
    top = max(0.0, b.y - margins.top)
    right = min(float(bounds.width), b.right + margins.right)
    bottom = min(float(bounds.height), b.bottom + margins.bottom)
    return Box(left, top, max(0.0, right - left), max(0.0, bottom - top), space=b.space)


def clamp_box(b: Box, bounds: ImageSize) -> Box:
    """Intersect ``b`` with the [0,width]x[0,height] rectangle."""
    return expand_box(b, Margins(), bounds)


def rescale_box(b: Box, from_size: ImageSize, to_size: ImageSize, space: str | None = None) -> Box:
    """Map ``b`` from one image resolution to another.

    Each coordinate scales by the per-axis ratio. ``space`` names the
    coordinate space of the result; by default the input's tag is kept.
    """
    sx = to_size.width / from_size.width
    sy = to_size.height / from_size.height
    return Box(b.x * sx, b.y * sy, b.w * sx, b.h * sy, space=space if space is not None else b.space)


def crop_to_frame(b: Box, crop_origin: tuple[float, float]) -> Box:
    """Translate a crop-local box into frame coordinates."""
    ox, oy = crop_origin
    return Box(b.x + ox, b.y + oy, b.w, b.h, space=FRAME)


def frame_to_crop(b: Box, crop_origin: tuple[float, float]) -> Box:
    """Translate a frame box into the local coordinates of a crop."""
    ox, oy = crop_origin
    return Box(b.x - ox, b.y - oy, b.w, b.h, space=crop_space(int(ox), int(oy)))


def pixel_rect(b: Box, bounds: ImageSize) -> tuple[int, int, int, int] | None:
    """Integral (left, top, width, height) covering ``b`` within ``bounds``.

    The rectangle is the smallest whole-pixel rect containing the box's
    intersection with the image; None when that intersection is empty.
    """
    left = max(0, math.floor(b.x))
    top = max(0, math.floor(b.y))
    right = min(bounds.width, math.ceil(b.right))
    bottom = min(bounds.height, math.ceil(b.bottom))
    if right - left <= 0 or bottom - top <= 0:
        return None
    return left, top, right - left, bottom - top
