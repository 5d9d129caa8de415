"""Axis-aligned box arithmetic.

Boxes are half-open real rectangles ``[x, x + w) x [y, y + h)``, so two boxes
that only share an edge have zero intersection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import InvalidArgumentError

__all__ = [
    "BBox",
    "Annotation",
    "Detection",
    "iou",
    "intersection_rect",
    "covered_fraction",
    "remap_box",
    "unmap_box",
    "clip_box",
    "flip_box",
    "boxes_to_array",
    "pairwise_iou",
]


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidArgumentError(f"BBox.{name} must be finite, got {v!r}")
        if not (self.w > 0 and self.h > 0):
            raise InvalidArgumentError(
                f"BBox width and height must be positive, got w={self.w}, h={self.h}"
            )

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class Annotation:
    bbox: BBox
    category: int
    occlusion_ratio: Optional[float] = None

    def __post_init__(self):
        r = self.occlusion_ratio
        if r is not None and not (0.0 <= r <= 1.0):
            raise InvalidArgumentError(f"occlusion_ratio must lie in [0, 1], got {r!r}")


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    category: int
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise InvalidArgumentError(f"score must lie in [0, 1], got {self.score!r}")


def _overlap(a: BBox, b: BBox) -> Tuple[float, float]:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return iw, ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when they do not overlap."""
    iw, ih = _overlap(a, b)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def intersection_rect(a: BBox, b: BBox) -> Optional[BBox]:
    """Overlap rectangle of ``a`` and ``b``, or ``None`` when it is empty."""
    x1 = max(a.x, b.x)
    y1 = max(a.y, b.y)
    x2 = min(a.x + a.w, b.x + b.w)
    y2 = min(a.y + a.h, b.y + b.h)
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def covered_fraction(target: BBox, covers: Sequence[BBox]) -> float:
    """Exact fraction of ``target``'s area lying inside the union of ``covers``.

    Uses coordinate compression over the clipped cover edges, so overlapping
    covers are never double counted.
    """
    clipped = [r for r in (intersection_rect(target, c) for c in covers) if r is not None]
    if not clipped:
        return 0.0
    xs = np.unique([v for r in clipped for v in (r.x, r.x + r.w)])
    ys = np.unique([v for r in clipped for v in (r.y, r.y + r.h)])
    grid = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    for r in clipped:
        c0, c1 = np.searchsorted(xs, [r.x, r.x + r.w])
        r0, r1 = np.searchsorted(ys, [r.y, r.y + r.h])
        grid[r0:r1, c0:c1] = True
    cell_areas = np.outer(np.diff(ys), np.diff(xs))
    covered = float(cell_areas[grid].sum())
    return min(1.0, covered / target.area)


def clip_box(b: BBox, width: float, height: float) -> Optional[BBox]:
    """Clip ``b`` to the image ``[0, width) x [0, height)``; ``None`` if nothing is left."""
    return intersection_rect(b, BBox(0.0, 0.0, width, height))


def remap_box(
    b: BBox,
    region: BBox,
    fine_size: Tuple[float, float],
    bounds: Optional[Tuple[float, float]] = None,
) -> Optional[BBox]:
    """Map a box from fine-image coordinates back into source coordinates.

    ``region`` is the source rectangle that was resized to ``fine_size``.
    When ``bounds`` (source width, height) is given the result is clamped to
    the source image, and ``None`` is returned if the clamped box is empty.
    """
    fw, fh = fine_size
    if not (fw > 0 and fh > 0):
        raise InvalidArgumentError(f"fine_size must be positive, got {fine_size!r}")
    sx = region.w / fw
    sy = region.h / fh
    out = BBox(region.x + b.x * sx, region.y + b.y * sy, b.w * sx, b.h * sy)
    if bounds is None:
        return out
    return clip_box(out, bounds[0], bounds[1])


def unmap_box(b: BBox, region: BBox, fine_size: Tuple[float, float]) -> BBox:
    """Inverse of :func:`remap_box` without clamping: source -> fine coordinates."""
    fw, fh = fine_size
    sx = fw / region.w
    sy = fh / region.h
    return BBox((b.x - region.x) * sx, (b.y - region.y) * sy, b.w * sx, b.h * sy)


def flip_box(b: BBox, width: float) -> BBox:
    """Mirror a box horizontally inside an image of the given width."""
    return BBox(width - b.x - b.w, b.y, b.w, b.h)


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` float array of ``x, y, w, h``."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between ``(n, 4)`` and ``(m, 4)`` xywh arrays.

    Evaluates the same expression as :func:`iou`, so results agree bitwise.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax, ay, aw, ah = (a[:, i][:, None] for i in range(4))
    bx, by, bw, bh = (b[:, i][None, :] for i in range(4))
    iw = np.minimum(ax + aw, bx + bw) - np.maximum(ax, bx)
    ih = np.minimum(ay + ah, by + bh) - np.maximum(ay, by)
    valid = (iw > 0) & (ih > 0)
    inter = np.where(valid, iw * ih, 0.0)
    union = aw * ah + bw * bh - inter
    return np.where(valid, inter / union, 0.0)
