"""Detection post-processing and the synthetic oracle detector."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import InvalidArgumentError
from .geometry import Annotation, BBox, Detection, boxes_to_array, clip_box, pairwise_iou
from .occlusion_map import MapParams, OcclusionMap, TruthStyle, generate_truth_map
from .scenes import SceneSpec

__all__ = [
    "NmsParams",
    "nms",
    "DetectorPort",
    "OracleDetectorParams",
    "oracle_detect",
    "recall_probability",
    "OracleDetector",
]


@dataclass(frozen=True)
class NmsParams:
    iou_threshold: float = 0.5
    max_detections: int = 500

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise InvalidArgumentError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold!r}")
        if int(self.max_detections) != self.max_detections or self.max_detections < 1:
            raise InvalidArgumentError(f"max_detections must be a positive integer, got {self.max_detections!r}")


def nms(dets: Sequence[Detection], params: NmsParams = NmsParams()) -> List[Detection]:
    """Per-category greedy non-maximum suppression.

    Detections are visited by descending score, ties broken by input order. A
    detection is dropped when its IoU with an already kept detection of the
    same category exceeds ``params.iou_threshold``. The survivors come back
    in that same order, truncated to ``params.max_detections``.
    """
    if not dets:
        return []
    scores = np.array([d.score for d in dets], dtype=np.float64)
    cats = np.array([d.category for d in dets])
    boxes = boxes_to_array([d.bbox for d in dets])
    order = np.argsort(-scores, kind="stable")
    keep = np.zeros(len(dets), dtype=bool)
    for c in np.unique(cats):
        idx = order[cats[order] == c]
        ious = pairwise_iou(boxes[idx], boxes[idx])
        suppressed = np.zeros(len(idx), dtype=bool)
        for i in range(len(idx)):
            if suppressed[i]:
                continue
            keep[idx[i]] = True
            suppressed[i + 1:] |= ious[i, i + 1:] > params.iou_threshold
    kept = [dets[i] for i in order if keep[i]]
    return kept[: int(params.max_detections)]


@runtime_checkable
class DetectorPort(Protocol):
    """What the two-phase pipeline needs from a detector.

    ``detect`` runs on an image handle resized to ``input_size`` and returns
    detections in input coordinates plus an occlusion map over that input.
    """

    def detect(self, image, input_size: Tuple[int, int]) -> Tuple[List[Detection], OcclusionMap]:
        ...


@dataclass(frozen=True)
class OracleDetectorParams:
    """Behaviour of the simulated detector.

    An object of (input-scaled) area ``A`` and occlusion ratio ``r`` is found
    with probability ``min(1, A / a_ref) * (1 - kappa * r)``.
    """

    seed: int = 0
    a_ref: float = 4096.0
    kappa: float = 0.5
    jitter_sigma: float = 0.03
    score_floor: float = 0.05
    map_noise: float = 0.0
    map_stride: int = 4

    def __post_init__(self):
        if not self.a_ref > 0:
            raise InvalidArgumentError(f"a_ref must be positive, got {self.a_ref!r}")
        if not 0.0 <= self.kappa <= 1.0:
            raise InvalidArgumentError(f"kappa must lie in [0, 1], got {self.kappa!r}")
        if self.jitter_sigma < 0 or self.map_noise < 0:
            raise InvalidArgumentError("jitter_sigma and map_noise must be >= 0")
        if not 0.0 <= self.score_floor <= 1.0:
            raise InvalidArgumentError("score_floor must lie in [0, 1]")


def recall_probability(area: float, occlusion_ratio: float, params: OracleDetectorParams) -> float:
    return min(1.0, area / params.a_ref) * (1.0 - params.kappa * occlusion_ratio)


def _scene_rng(scene: SceneSpec, input_size, seed: int) -> np.random.Generator:
    key = zlib.crc32(scene.fingerprint() + np.asarray(input_size, dtype=np.float64).tobytes())
    return np.random.default_rng([seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF, key])


def oracle_detect(
    scene: SceneSpec,
    input_size: Tuple[float, float],
    params: OracleDetectorParams = OracleDetectorParams(),
    map_params: Optional[MapParams] = None,
) -> Tuple[List[Detection], OcclusionMap]:
    """Simulate a detector on ``scene`` resized to ``input_size``.

    Each object is emitted with its recall probability, its box jittered by
    ``N(0, jitter_sigma * dim)`` per coordinate. The returned map is the
    highlighted truth map of the resized annotations, optionally perturbed by
    multiplicative noise. The random stream is keyed on the scene content and
    ``params.seed``, so repeated calls agree.
    """
    in_w, in_h = input_size
    sx, sy = in_w / scene.img_w, in_h / scene.img_h
    rng = _scene_rng(scene, input_size, int(params.seed))
    sigma = params.jitter_sigma
    dets: List[Detection] = []
    scaled: List[Annotation] = []
    for obj, ratio in zip(scene.objects, scene.occlusion_ratios):
        b = obj.bbox
        sb = BBox(b.x * sx, b.y * sy, b.w * sx, b.h * sy)
        scaled.append(Annotation(sb, obj.category, ratio))
        p = recall_probability(sb.area, ratio, params)
        u = rng.random()
        noise = rng.standard_normal(4)
        if u >= p:
            continue
        jw, jh = sigma * sb.w, sigma * sb.h
        w = max(sb.w + noise[2] * jw, 0.05 * sb.w)
        h = max(sb.h + noise[3] * jh, 0.05 * sb.h)
        box = clip_box(BBox(sb.x + noise[0] * jw, sb.y + noise[1] * jh, w, h), in_w, in_h)
        if box is None:
            continue
        penalty = sigma * float(np.abs(noise).mean())
        score = float(np.clip(max(params.score_floor, p - penalty), 0.0, 1.0))
        dets.append(Detection(box, obj.category, score))

    map_params = map_params or MapParams(stride=params.map_stride)
    occ = generate_truth_map(
        scaled, int(round(in_w)), int(round(in_h)), style=TruthStyle.HIGHLIGHTED, params=map_params
    )
    if params.map_noise > 0:
        factor = 1.0 + params.map_noise * rng.standard_normal(occ.shape)
        occ = occ.with_values(np.clip(occ.values * factor, 0.0, 1.0))
    return dets, occ


class OracleDetector(BaseEstimator):
    """Estimator wrapper around :func:`oracle_detect` that satisfies :class:`DetectorPort`.

    Parameters mirror :class:`OracleDetectorParams`; ``random_state`` is its
    ``seed``.
    """

    def __init__(
        self,
        a_ref=4096.0,
        kappa=0.5,
        jitter_sigma=0.03,
        score_floor=0.05,
        map_noise=0.0,
        map_stride=4,
        random_state=0,
    ):
        self.a_ref = a_ref
        self.kappa = kappa
        self.jitter_sigma = jitter_sigma
        self.score_floor = score_floor
        self.map_noise = map_noise
        self.map_stride = map_stride
        self.random_state = random_state

    @classmethod
    def from_params(cls, params: OracleDetectorParams) -> "OracleDetector":
        return cls(
            a_ref=params.a_ref,
            kappa=params.kappa,
            jitter_sigma=params.jitter_sigma,
            score_floor=params.score_floor,
            map_noise=params.map_noise,
            map_stride=params.map_stride,
            random_state=params.seed,
        )

    def to_params(self) -> OracleDetectorParams:
        return OracleDetectorParams(
            seed=int(self.random_state or 0),
            a_ref=self.a_ref,
            kappa=self.kappa,
            jitter_sigma=self.jitter_sigma,
            score_floor=self.score_floor,
            map_noise=self.map_noise,
            map_stride=self.map_stride,
        )

    def fit(self, X=None, y=None):
        self.params_ = self.to_params()
        return self

    def detect(self, image: SceneSpec, input_size) -> Tuple[List[Detection], OcclusionMap]:
        return oracle_detect(image, input_size, self.to_params())
