"""Occlusion sub-region selection.

An occlusion map is thresholded window by window into a binary mask, the
mask cells are grouped with seeded k-means, and each group's bounding box is
grown and shifted into a valid crop of the source image.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .exceptions import InvalidArgumentError
from .geometry import BBox, clip_box
from .occlusion_map import OcclusionMap

__all__ = [
    "MinSizeRule",
    "SelectParams",
    "Region",
    "occlusion_mask",
    "kmeans",
    "cluster_mask",
    "correct_regions",
    "select_regions",
]


class MinSizeRule(str, enum.Enum):
    """How the minimum crop size is derived.

    ``MAX`` takes the larger of the fixed ``(w_r, h_r)`` and a quarter of the
    image dimensions; ``FIXED`` and ``QUARTER`` use only one of them.
    """

    MAX = "max"
    FIXED = "fixed"
    QUARTER = "quarter"


@dataclass(frozen=True)
class SelectParams:
    h_r: float = 300.0
    w_r: float = 300.0
    h_w: int = 40
    w_w: int = 40
    thr: float = 45.0
    n_regions: int = 3
    min_size_rule: MinSizeRule = MinSizeRule.MAX

    def __post_init__(self):
        object.__setattr__(self, "min_size_rule", MinSizeRule(self.min_size_rule))
        for name in ("h_r", "w_r", "h_w", "w_w", "thr", "n_regions"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("h_w", "w_w", "n_regions"):
            if int(getattr(self, name)) != getattr(self, name):
                raise InvalidArgumentError(f"{name} must be an integer")

    def min_size(self, img_w: float, img_h: float):
        if self.min_size_rule is MinSizeRule.FIXED:
            return self.w_r, self.h_r
        if self.min_size_rule is MinSizeRule.QUARTER:
            return img_w / 4.0, img_h / 4.0
        return max(self.w_r, img_w / 4.0), max(self.h_r, img_h / 4.0)


@dataclass(frozen=True)
class Region:
    rect: BBox


def occlusion_mask(occ: OcclusionMap, params: SelectParams = SelectParams()) -> np.ndarray:
    """Binary mask of the non-overlapping windows whose sum strictly exceeds ``thr``.

    Windows step by ``(h_w, w_w)`` cells from the origin; ragged edge windows
    are included.
    """
    values = occ.values
    mask = np.zeros(values.shape, dtype=bool)
    h_w, w_w = int(params.h_w), int(params.w_w)
    for p in range(0, values.shape[0], h_w):
        for q in range(0, values.shape[1], w_w):
            if values[p:p + h_w, q:q + w_w].sum() > params.thr:
                mask[p:p + h_w, q:q + w_w] = True
    return mask


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(len(points))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(np.argmax(d2))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, len(points) - 1)
        centers[i] = points[idx]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6):
    """Seeded k-means++ initialisation followed by Lloyd iterations.

    Stops when no centroid moves by ``tol`` or more, or after ``max_iter``
    iterations. An empty cluster is re-seeded at the point farthest from all
    current centroids. Returns ``(labels, centers)``.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, points.shape[-1] if points.ndim == 2 else 2))
    k = int(min(k, len(np.unique(points, axis=0))))
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    centers = _kmeanspp_init(points, k, rng)
    labels = np.zeros(len(points), dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
            else:
                far = ((points[:, None, :] - new_centers[None, :, :]) ** 2).sum(axis=2).min(axis=1)
                new_centers[j] = points[int(np.argmax(far))]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1), centers


def cluster_mask(
    mask: np.ndarray,
    n: int,
    seed: int = 0,
    stride: float = 1.0,
    scale: Sequence[float] = (1.0, 1.0),
) -> List[BBox]:
    """Cluster mask cells and return each cluster's bounding rectangle in source pixels.

    Cell ``(r, c)`` spans ``[c*stride, (c+1)*stride)`` horizontally; ``scale``
    ``(sx, sy)`` then maps map-image pixels to source pixels.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    cells = np.argwhere(np.asarray(mask, dtype=bool))
    if len(cells) == 0:
        return []
    labels, centers = kmeans(cells, n, seed=seed)
    sx, sy = scale
    rects = []
    for j in range(len(centers)):
        members = cells[labels == j]
        if len(members) == 0:
            continue
        r0, c0 = members.min(axis=0)
        r1, c1 = members.max(axis=0) + 1
        rects.append(
            BBox(c0 * stride * sx, r0 * stride * sy, (c1 - c0) * stride * sx, (r1 - r0) * stride * sy)
        )
    return rects


def _fit_axis(lo: float, length: float, min_len: float, limit: float):
    if min_len >= limit:
        return 0.0, float(limit)
    new_len = max(length, min_len)
    if new_len >= limit:
        return 0.0, float(limit)
    start = lo + length / 2.0 - new_len / 2.0
    start = min(max(start, 0.0), limit - new_len)
    return start, new_len


def correct_regions(
    rects: Sequence[BBox], img_w: float, img_h: float, params: SelectParams = SelectParams()
) -> List[Region]:
    """Grow each rectangle about its centre to the minimum size, then shift it inside the image.

    An axis whose minimum exceeds the image extent spans the whole image.
    Rectangles are clipped to the image first; ones entirely outside are dropped.
    """
    min_w, min_h = params.min_size(img_w, img_h)
    out = []
    for rect in rects:
        r = clip_box(rect, img_w, img_h)
        if r is None:
            continue
        x, w = _fit_axis(r.x, r.w, min_w, img_w)
        y, h = _fit_axis(r.y, r.h, min_h, img_h)
        out.append(Region(BBox(x, y, w, h)))
    return out


def select_regions(
    occ: OcclusionMap,
    img_w: Optional[float] = None,
    img_h: Optional[float] = None,
    params: SelectParams = SelectParams(),
    seed: int = 0,
) -> List[Region]:
    """Pick at most ``params.n_regions`` occlusion sub-regions of the source image.

    ``img_w``/``img_h`` default to the map's own image size; when they differ
    the cluster rectangles are rescaled into source pixels.
    """
    img_w = occ.img_w if img_w is None else img_w
    img_h = occ.img_h if img_h is None else img_h
    mask = occlusion_mask(occ, params)
    scale = (img_w / occ.img_w, img_h / occ.img_h)
    rects = cluster_mask(mask, int(params.n_regions), seed=seed, stride=occ.stride, scale=scale)
    return correct_regions(rects, img_w, img_h, params)
