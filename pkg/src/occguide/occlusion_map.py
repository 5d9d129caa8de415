"""Occlusion confidence maps: truth generation, blurring and box scoring."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .exceptions import InvalidArgumentError
from .geometry import Annotation, BBox, clip_box, intersection_rect

__all__ = [
    "OcclusionMap",
    "TruthStyle",
    "MapParams",
    "generate_truth_map",
    "gaussian_blur",
    "gaussian_kernel",
    "instance_occlusion_score",
    "occlusion_weight",
    "cell_span",
]


class TruthStyle(str, enum.Enum):
    OCCLUSION_ONLY = "occlusion_only"
    HIGHLIGHTED = "highlighted"

    @classmethod
    def parse(cls, value) -> "TruthStyle":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"occlusion": cls.OCCLUSION_ONLY, "occlusiononly": cls.OCCLUSION_ONLY,
                   "highlightedocclusion": cls.HIGHLIGHTED, "highlighted_occlusion": cls.HIGHLIGHTED}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise InvalidArgumentError(f"unknown truth style {value!r}; expected one of {valid}") from None


@dataclass(frozen=True)
class MapParams:
    """Truth-map generation settings.

    ``sigma`` and ``radius`` are measured in map cells; ``stride`` is the
    cell size in source pixels.
    """

    stride: int = 4
    style: TruthStyle = TruthStyle.HIGHLIGHTED
    base_value: float = 0.3
    occlusion_value: float = 1.0
    sigma: float = 2.0
    radius: int = 5

    def __post_init__(self):
        object.__setattr__(self, "style", TruthStyle.parse(self.style))
        if int(self.stride) != self.stride or self.stride < 1:
            raise InvalidArgumentError(f"stride must be a positive integer, got {self.stride!r}")
        if not (0.0 <= self.base_value <= 1.0 and 0.0 <= self.occlusion_value <= 1.0):
            raise InvalidArgumentError("base_value and occlusion_value must lie in [0, 1]")
        if self.sigma < 0:
            raise InvalidArgumentError(f"sigma must be >= 0, got {self.sigma!r}")
        if int(self.radius) != self.radius or self.radius < 1:
            raise InvalidArgumentError(f"radius must be a positive integer, got {self.radius!r}")


@dataclass(frozen=True, eq=False)
class OcclusionMap:
    """A strided grid of occlusion confidences over an ``img_w x img_h`` image.

    Cell ``(r, c)`` covers source pixels ``[c*stride, (c+1)*stride) x
    [r*stride, (r+1)*stride)``. ``values`` is stored read-only.
    """

    img_w: int
    img_h: int
    stride: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.img_w <= 0 or self.img_h <= 0:
            raise InvalidArgumentError(
                f"image dims must be positive, got {self.img_w}x{self.img_h}"
            )
        if int(self.stride) != self.stride or self.stride < 1:
            raise InvalidArgumentError(f"stride must be a positive integer, got {self.stride!r}")
        values = np.array(self.values, dtype=np.float64)
        expected = self.grid_shape(self.img_w, self.img_h, self.stride)
        if values.shape != expected:
            raise InvalidArgumentError(
                f"map grid has shape {values.shape}, expected {expected} for "
                f"{self.img_w}x{self.img_h} at stride {self.stride}"
            )
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0 or values.max(initial=0.0) > 1:
            raise InvalidArgumentError("map values must be finite and lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @staticmethod
    def grid_shape(img_w: int, img_h: int, stride: int) -> Tuple[int, int]:
        return (math.ceil(img_h / stride), math.ceil(img_w / stride))

    @classmethod
    def zeros(cls, img_w: int, img_h: int, stride: int = 4) -> "OcclusionMap":
        if stride < 1:
            raise InvalidArgumentError(f"stride must be a positive integer, got {stride!r}")
        return cls(img_w, img_h, stride, np.zeros(cls.grid_shape(img_w, img_h, stride)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "OcclusionMap":
        return OcclusionMap(self.img_w, self.img_h, self.stride, values)

    def flip_horizontal(self) -> "OcclusionMap":
        return self.with_values(self.values[:, ::-1])

    def __eq__(self, other):
        if not isinstance(other, OcclusionMap):
            return NotImplemented
        return (
            (self.img_w, self.img_h, self.stride) == (other.img_w, other.img_h, other.stride)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def cell_span(lo: float, hi: float, stride: int, n: int) -> Tuple[int, int]:
    """Half-open index range of cells whose extent overlaps the interval ``(lo, hi)``."""
    c0 = max(0, math.floor(lo / stride))
    c1 = min(n, math.ceil(hi / stride))
    return c0, max(c0, c1)


def _box_cells(box: BBox, img_w: int, img_h: int, stride: int, shape) -> Optional[Tuple[slice, slice]]:
    clipped = clip_box(box, img_w, img_h)
    if clipped is None:
        return None
    r0, r1 = cell_span(clipped.y, clipped.y + clipped.h, stride, shape[0])
    c0, c1 = cell_span(clipped.x, clipped.x + clipped.w, stride, shape[1])
    if r1 <= r0 or c1 <= c0:
        return None
    return slice(r0, r1), slice(c0, c1)


def _pairwise_intersections(boxes: Sequence[BBox]) -> Iterable[BBox]:
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            r = intersection_rect(boxes[i], boxes[j])
            if r is not None:
                yield r


def generate_truth_map(
    annotations: Sequence[Annotation],
    img_w: int,
    img_h: int,
    stride: Optional[int] = None,
    style: Optional[TruthStyle] = None,
    params: Optional[MapParams] = None,
) -> OcclusionMap:
    """Paint an occlusion truth map from ground-truth boxes.

    Pairwise box intersections are painted at ``params.occlusion_value``. The
    highlighted style first paints every box interior at ``params.base_value``.
    The painted grid is then Gaussian blurred and clamped to ``[0, 1]``.
    Explicit ``stride``/``style`` arguments override those in ``params``.
    """
    params = params or MapParams()
    stride = params.stride if stride is None else stride
    style = params.style if style is None else TruthStyle.parse(style)
    if int(stride) != stride or stride < 1:
        raise InvalidArgumentError(f"stride must be a positive integer, got {stride!r}")
    if img_w <= 0 or img_h <= 0:
        raise InvalidArgumentError(f"image dims must be positive, got {img_w}x{img_h}")
    stride = int(stride)

    shape = OcclusionMap.grid_shape(img_w, img_h, stride)
    grid = np.zeros(shape, dtype=np.float64)
    boxes = [a.bbox for a in annotations]
    if style is TruthStyle.HIGHLIGHTED:
        for b in boxes:
            cells = _box_cells(b, img_w, img_h, stride, shape)
            if cells is not None:
                grid[cells] = np.maximum(grid[cells], params.base_value)
    for r in _pairwise_intersections(boxes):
        cells = _box_cells(r, img_w, img_h, stride, shape)
        if cells is not None:
            grid[cells] = params.occlusion_value

    out = OcclusionMap(img_w, img_h, stride, grid)
    return gaussian_blur(out, params.sigma, params.radius)


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps at offsets ``-radius..radius``."""
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(occ: OcclusionMap, sigma: float, kernel_radius: int) -> OcclusionMap:
    """Separable Gaussian blur with zero padding, clamped back into ``[0, 1]``.

    ``sigma == 0`` returns the map unchanged.
    """
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma!r}")
    if sigma == 0:
        return occ
    if kernel_radius < 1:
        raise InvalidArgumentError(f"kernel_radius must be positive, got {kernel_radius!r}")
    k = gaussian_kernel(sigma, int(kernel_radius))
    out = ndimage.convolve1d(occ.values, k, axis=0, mode="constant", cval=0.0)
    out = ndimage.convolve1d(out, k, axis=1, mode="constant", cval=0.0)
    return occ.with_values(np.clip(out, 0.0, 1.0))


def instance_occlusion_score(box: BBox, occ: OcclusionMap) -> float:
    """Sum of the map cells touched by ``box`` (clipped to the image)."""
    cells = _box_cells(box, occ.img_w, occ.img_h, occ.stride, occ.shape)
    if cells is None:
        return 0.0
    return float(occ.values[cells].sum())


def occlusion_weight(box: BBox, occ: OcclusionMap, thr_occ: float = 45.0) -> int:
    """Hard-example weight: 2 when the box's occlusion score reaches ``thr_occ``, else 1."""
    if not thr_occ > 0:
        raise InvalidArgumentError(f"thr_occ must be positive, got {thr_occ!r}")
    return 2 if instance_occlusion_score(box, occ) >= thr_occ else 1
