"""Synthetic aerial scenes with controlled inter-object occlusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InvalidArgumentError
from .geometry import Annotation, BBox, covered_fraction, intersection_rect

__all__ = [
    "SceneObject",
    "SceneSpec",
    "OcclusionBins",
    "SceneGenParams",
    "crop_scene",
    "synth_scene",
]


@dataclass(frozen=True)
class OcclusionBins:
    """Occlusion-ratio strata: ``none`` is exactly 0, ``partial`` is ``(0, edge)``
    and ``heavy`` is ``[edge, 1]`` (or ``(0, edge]`` / ``(edge, 1]`` when
    ``edge_in_heavy`` is false)."""

    edge: float = 0.5
    edge_in_heavy: bool = True

    NAMES = ("none", "partial", "heavy")

    def __post_init__(self):
        if not 0.0 < self.edge < 1.0:
            raise InvalidArgumentError(f"bin edge must lie in (0, 1), got {self.edge!r}")

    def bin_of(self, ratio: float) -> str:
        if ratio <= 0.0:
            return "none"
        if ratio > self.edge or (self.edge_in_heavy and ratio == self.edge):
            return "heavy"
        return "partial"


@dataclass(frozen=True)
class SceneObject:
    bbox: BBox
    category: int


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """An image size plus objects listed in draw order (later objects are on top).

    Each object's occlusion ratio is the fraction of its box covered by the
    union of the boxes drawn after it.
    """

    img_w: float
    img_h: float
    objects: Tuple[SceneObject, ...] = ()
    image_id: Optional[str] = None
    occlusion_ratios: Tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.img_w > 0 and self.img_h > 0):
            raise InvalidArgumentError(f"scene dims must be positive, got {self.img_w}x{self.img_h}")
        objects = tuple(self.objects)
        object.__setattr__(self, "objects", objects)
        boxes = [o.bbox for o in objects]
        ratios = tuple(covered_fraction(b, boxes[i + 1:]) for i, b in enumerate(boxes))
        object.__setattr__(self, "occlusion_ratios", ratios)

    @property
    def width(self) -> float:
        return self.img_w

    @property
    def height(self) -> float:
        return self.img_h

    def __len__(self) -> int:
        return len(self.objects)

    def __eq__(self, other):
        if not isinstance(other, SceneSpec):
            return NotImplemented
        return (self.img_w, self.img_h, self.objects) == (other.img_w, other.img_h, other.objects)

    __hash__ = None

    def annotations(self) -> List[Annotation]:
        return [
            Annotation(o.bbox, o.category, r) for o, r in zip(self.objects, self.occlusion_ratios)
        ]

    def crop(self, region: BBox, out_size: Tuple[float, float]) -> "SceneSpec":
        return crop_scene(self, region, out_size)

    def fingerprint(self) -> bytes:
        arr = np.array(
            [self.img_w, self.img_h]
            + [v for o in self.objects for v in (*o.bbox.as_tuple(), o.category)],
            dtype=np.float64,
        )
        return arr.tobytes()


def crop_scene(
    scene: SceneSpec,
    region: BBox,
    out_size: Tuple[float, float],
    min_visible: float = 0.0,
) -> SceneSpec:
    """Cut ``region`` out of ``scene`` and rescale it to ``out_size``.

    Objects are clipped to the region; those whose visible fraction is below
    ``min_visible`` (or zero) are dropped. Occlusion ratios are re-derived
    from the clipped boxes.
    """
    out_w, out_h = out_size
    sx = out_w / region.w
    sy = out_h / region.h
    kept = []
    for o in scene.objects:
        clipped = intersection_rect(o.bbox, region)
        if clipped is None or clipped.area / o.bbox.area < min_visible:
            continue
        kept.append(
            SceneObject(
                BBox((clipped.x - region.x) * sx, (clipped.y - region.y) * sy, clipped.w * sx, clipped.h * sy),
                o.category,
            )
        )
    return SceneSpec(out_w, out_h, tuple(kept), image_id=scene.image_id)


@dataclass(frozen=True)
class SceneGenParams:
    """Knobs for :func:`synth_scene`.

    ``quotas`` are target fractions of unoccluded, partially and heavily
    occluded objects; ``cluster_spread`` is the standard deviation (pixels)
    of unoccluded object centres around their cluster centre.
    """

    img_w: float = 1024.0
    img_h: float = 1024.0
    n_clusters: int = 5
    objects_per_cluster: int = 15
    size_min: float = 16.0
    size_max: float = 48.0
    cluster_spread: float = 40.0
    quotas: Tuple[float, float, float] = (0.7, 0.2, 0.1)
    n_categories: int = 10
    bins: OcclusionBins = OcclusionBins()
    max_attempts: int = 400

    def __post_init__(self):
        object.__setattr__(self, "quotas", tuple(float(q) for q in self.quotas))
        if self.n_clusters < 0 or self.objects_per_cluster < 0:
            raise InvalidArgumentError("cluster and object counts must be non-negative")
        if not (0 < self.size_min <= self.size_max):
            raise InvalidArgumentError("need 0 < size_min <= size_max")
        if self.size_max * 2 > min(self.img_w, self.img_h):
            raise InvalidArgumentError("objects too large for the image")
        if len(self.quotas) != 3 or min(self.quotas) < 0 or not math.isclose(sum(self.quotas), 1.0, abs_tol=1e-9):
            raise InvalidArgumentError(f"quotas must be three non-negative fractions summing to 1, got {self.quotas}")
        if self.n_categories < 1:
            raise InvalidArgumentError("n_categories must be >= 1")


# Occlusion targets are drawn away from the bin edges so rounding and
# incidental overlaps rarely push an object into the neighbouring bin.
_TARGETS = {"partial": (0.12, 0.4), "heavy": (0.6, 0.85)}
_HEAVY_MAX = 0.95


def _check_feasible(p: SceneGenParams) -> None:
    if p.n_clusters == 0 or p.objects_per_cluster == 0:
        return
    occluded = p.quotas[1] + p.quotas[2]
    if p.objects_per_cluster == 1 and occluded > 0:
        raise InvalidArgumentError(
            "occluded quotas need at least two objects per cluster"
        )
    # The first object of every cluster has nothing in front of it.
    if p.quotas[0] < 1.0 / p.objects_per_cluster - 0.1:
        raise InvalidArgumentError(
            f"no-occlusion quota {p.quotas[0]} is infeasible with "
            f"{p.objects_per_cluster} objects per cluster"
        )


class _Placer:
    def __init__(self, p: SceneGenParams, rng: np.random.Generator):
        self.p = p
        self.rng = rng
        self.boxes: List[BBox] = []
        self.arr = np.zeros((0, 4))

    def _overlapping(self, b: BBox) -> List[BBox]:
        if not self.boxes:
            return []
        a = self.arr
        ix = np.minimum(a[:, 0] + a[:, 2], b.x + b.w) - np.maximum(a[:, 0], b.x)
        iy = np.minimum(a[:, 1] + a[:, 3], b.y + b.h) - np.maximum(a[:, 1], b.y)
        return [self.boxes[i] for i in np.flatnonzero((ix > 0) & (iy > 0))]

    def _inside(self, b: BBox) -> bool:
        return b.x >= 0 and b.y >= 0 and b.x + b.w <= self.p.img_w and b.y + b.h <= self.p.img_h

    def add(self, b: BBox) -> None:
        self.boxes.append(b)
        self.arr = np.vstack([self.arr, b.as_tuple()])

    def size(self) -> Tuple[float, float]:
        lo, hi = self.p.size_min, self.p.size_max
        return float(self.rng.uniform(lo, hi)), float(self.rng.uniform(lo, hi))

    def place_free(self, center: Tuple[float, float]) -> Optional[BBox]:
        w, h = self.size()
        spread = self.p.cluster_spread
        for attempt in range(self.p.max_attempts):
            s = spread * (1.0 + attempt / 25.0)
            cx, cy = center[0] + self.rng.normal(0, s), center[1] + self.rng.normal(0, s)
            b = BBox(cx - w / 2, cy - h / 2, w, h)
            if self._inside(b) and not self._overlapping(b):
                return b
        return None

    def place_occluded(self, anchors: Sequence[BBox], kind: str) -> Optional[BBox]:
        lo, hi = _TARGETS[kind]
        for _ in range(self.p.max_attempts):
            a = anchors[int(self.rng.integers(len(anchors)))]
            w = float(np.clip(a.w * self.rng.uniform(0.8, 1.2), self.p.size_min, self.p.size_max))
            h = float(np.clip(a.h * self.rng.uniform(0.8, 1.2), self.p.size_min, self.p.size_max))
            t = self.rng.uniform(lo, hi)
            fx = self.rng.uniform(math.sqrt(t), 1.0)
            fx = min(fx, a.w / w)
            fy = t / fx
            if fy > min(1.0, a.h / h):
                continue
            ox, oy = fx * w, fy * h
            x = a.x + a.w - ox if self.rng.random() < 0.5 else a.x - w + ox
            y = a.y + a.h - oy if self.rng.random() < 0.5 else a.y - h + oy
            b = BBox(x, y, w, h)
            if not self._inside(b):
                continue
            ratio = covered_fraction(b, self._overlapping(b))
            bin_name = self.p.bins.bin_of(ratio)
            if bin_name == kind and ratio <= _HEAVY_MAX:
                return b
        return None


def synth_scene(params: SceneGenParams = SceneGenParams(), seed: int = 0, image_id: Optional[str] = None) -> SceneSpec:
    """Generate a scene of occlusion clusters.

    Objects are placed one at a time, each *behind* everything placed so far,
    so an object's occlusion ratio is fixed at placement: unoccluded objects
    avoid all earlier boxes, occluded ones are tucked under an earlier object
    of the same cluster by a sampled overlap. Deterministic given ``seed``.
    """
    _check_feasible(params)
    rng = np.random.default_rng(seed)
    placer = _Placer(params, rng)
    placed: List[SceneObject] = []
    margin = params.cluster_spread + params.size_max
    kinds_all = np.array(OcclusionBins.NAMES)
    for _ in range(params.n_clusters):
        center = (
            float(rng.uniform(margin, max(margin, params.img_w - margin))),
            float(rng.uniform(margin, max(margin, params.img_h - margin))),
        )
        kinds = list(rng.choice(kinds_all, size=params.objects_per_cluster, p=params.quotas))
        if "none" in kinds:
            kinds.remove("none")
        else:
            kinds.pop()
        kinds.insert(0, "none")
        members: List[BBox] = []
        for kind in kinds:
            b = None
            if kind != "none" and members:
                b = placer.place_occluded(members, kind)
            if b is None:
                b = placer.place_free(center)
            if b is None:
                raise InvalidArgumentError(
                    "could not place object without overlap; scene is too crowded"
                )
            placer.add(b)
            members.append(b)
            placed.append(SceneObject(b, int(rng.integers(1, params.n_categories + 1))))
    # Placement order runs front to back; draw order is the reverse.
    return SceneSpec(params.img_w, params.img_h, tuple(reversed(placed)), image_id=image_id)
