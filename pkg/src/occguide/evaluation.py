"""Detection metrics: COCO-style AP/AR, occlusion-binned recall and dataset statistics.

Every dataset-level function takes parallel per-image sequences: ``dets[i]``
holds the detections and ``gts[i]`` the annotations of image ``i``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import InvalidArgumentError
from .geometry import Annotation, Detection, boxes_to_array, pairwise_iou
from .scenes import OcclusionBins

__all__ = [
    "EvalSettings",
    "EvalReport",
    "match_greedy",
    "average_precision",
    "average_recall",
    "recall_counts",
    "ar_occ",
    "dataset_stats",
    "evaluate",
    "OcclusionEvaluator",
    "COCO_IOU_THRESHOLDS",
]

COCO_IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
_RECALL_POINTS = np.linspace(0.0, 1.0, 101)

ImageDets = Sequence[Detection]
ImageGts = Sequence[Annotation]


@dataclass(frozen=True)
class EvalSettings:
    iou_thresholds: Tuple[float, ...] = COCO_IOU_THRESHOLDS
    small_area: float = 32.0 ** 2
    medium_area: float = 96.0 ** 2
    max_dets: int = 500
    occ_iou: float = 0.5
    occ_max_dets: int = 500
    stats_iou: float = 0.5
    bins: OcclusionBins = OcclusionBins()

    def __post_init__(self):
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        if not self.iou_thresholds or not all(0 < t <= 1 for t in self.iou_thresholds):
            raise InvalidArgumentError("iou_thresholds must be non-empty and lie in (0, 1]")
        if not 0 < self.small_area < self.medium_area:
            raise InvalidArgumentError("need 0 < small_area < medium_area")
        if self.max_dets < 1 or self.occ_max_dets < 1:
            raise InvalidArgumentError("max_dets must be positive")

    def stratum(self, area: float) -> str:
        if area < self.small_area:
            return "s"
        if area < self.medium_area:
            return "m"
        return "l"


@dataclass
class EvalReport:
    """Evaluation summary; ``None`` marks a metric whose ground-truth set is empty."""

    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_s: Optional[float]
    ap_m: Optional[float]
    ap_l: Optional[float]
    ar_s: Optional[float]
    ar_m: Optional[float]
    ar_l: Optional[float]
    ar_occ: Dict[str, Optional[float]]
    objects_per_image: float
    overlaps_per_image: float
    n_images: int = 0
    per_class_ap50: Dict[str, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def _check_lengths(dets, gts):
    if len(dets) != len(gts):
        raise InvalidArgumentError(f"got detections for {len(dets)} images but ground truth for {len(gts)}")


def match_greedy(dets: ImageDets, gts: ImageGts, iou_thr: float) -> np.ndarray:
    """Greedy one-to-one matching within a single image.

    Per category, detections are taken by descending score (ties by input
    order); each claims the still-unmatched ground truth of its category with
    the highest IoU, provided it is at least ``iou_thr``. Returns, for every
    detection, the index of its matched ground truth or -1.
    """
    matches = np.full(len(dets), -1, dtype=np.int64)
    if not dets or not gts:
        return matches
    det_boxes = boxes_to_array([d.bbox for d in dets])
    gt_boxes = boxes_to_array([g.bbox for g in gts])
    ious = pairwise_iou(det_boxes, gt_boxes)
    det_cat = np.array([d.category for d in dets])
    gt_cat = np.array([g.category for g in gts])
    ious[det_cat[:, None] != gt_cat[None, :]] = -1.0
    order = np.argsort(-np.array([d.score for d in dets]), kind="stable")
    taken = np.zeros(len(gts), dtype=bool)
    for i in order:
        row = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(row))
        if row[j] >= iou_thr:
            matches[i] = j
            taken[j] = True
    return matches


def _top_k(dets: ImageDets, k: int) -> List[Detection]:
    if len(dets) <= k:
        return list(dets)
    order = np.argsort(-np.array([d.score for d in dets]), kind="stable")[:k]
    return [dets[i] for i in sorted(order)]


def _interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    if n_gt == 0:
        raise ValueError("no ground truth")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, _RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def _ap_single(dets, gts, iou_thr, max_dets, area_range=None):
    """AP per category at one IoU threshold; returns ``{category: ap}`` for categories with GT."""
    records: Dict[int, List[Tuple[float, int, int, bool]]] = {}
    n_gt: Dict[int, int] = {}
    for img, (d_img, g_img) in enumerate(zip(dets, gts)):
        d_img = _top_k(d_img, max_dets)
        in_range = [area_range is None or area_range(g.bbox.area) for g in g_img]
        for g, ok in zip(g_img, in_range):
            if ok:
                n_gt[g.category] = n_gt.get(g.category, 0) + 1
        matches = match_greedy(d_img, g_img, iou_thr)
        for k, (d, m) in enumerate(zip(d_img, matches)):
            if m >= 0:
                if not in_range[m]:
                    continue
                tp = True
            else:
                if area_range is not None and not area_range(d.bbox.area):
                    continue
                tp = False
            records.setdefault(d.category, []).append((d.score, img, k, tp))
    out = {}
    for c, count in n_gt.items():
        recs = records.get(c, [])
        recs.sort(key=lambda r: (-r[0], r[1], r[2]))
        tp = np.array([r[3] for r in recs], dtype=bool)
        out[c] = _interpolated_ap(tp, count)
    return out


def average_precision(
    dets: Sequence[ImageDets],
    gts: Sequence[ImageGts],
    iou_thr: Optional[float] = None,
    max_dets: int = 500,
    area_range=None,
) -> Optional[float]:
    """101-point interpolated AP averaged over the categories present in ground truth.

    With ``iou_thr=None`` the result is also averaged over IoU thresholds
    0.50:0.05:0.95. ``area_range`` is an optional predicate on box area; ground
    truth outside it is ignored, as are detections matched to it and unmatched
    detections outside it. Returns ``None`` when there is no ground truth.
    """
    _check_lengths(dets, gts)
    thresholds = COCO_IOU_THRESHOLDS if iou_thr is None else (iou_thr,)
    per_thr = []
    for t in thresholds:
        per_cat = _ap_single(dets, gts, t, max_dets, area_range)
        if not per_cat:
            return None
        per_thr.append(np.mean([per_cat[c] for c in sorted(per_cat)]))
    return float(np.mean(per_thr))


def recall_counts(
    dets: Sequence[ImageDets],
    gts: Sequence[ImageGts],
    iou_thr: float,
    max_dets: int,
    gt_key=None,
) -> Dict[object, Tuple[int, int]]:
    """``{key: (matched, total)}`` ground-truth counts, grouping GT by ``gt_key(annotation)``.

    Matching always runs against all ground truth of the image, so a
    detection claimed by a GT in one group never counts for another.
    """
    _check_lengths(dets, gts)
    gt_key = gt_key or (lambda g: None)
    counts: Dict[object, List[int]] = {}
    for d_img, g_img in zip(dets, gts):
        d_img = _top_k(d_img, max_dets)
        matches = match_greedy(d_img, g_img, iou_thr)
        matched = np.zeros(len(g_img), dtype=bool)
        matched[matches[matches >= 0]] = True
        for g, m in zip(g_img, matched):
            c = counts.setdefault(gt_key(g), [0, 0])
            c[0] += int(m)
            c[1] += 1
    return {k: (v[0], v[1]) for k, v in counts.items()}


def average_recall(
    dets: Sequence[ImageDets],
    gts: Sequence[ImageGts],
    iou_thr: Optional[float] = 0.5,
    max_dets: int = 500,
    gt_filter=None,
) -> Optional[float]:
    """Fraction of (filtered) ground truth matched; averaged over 0.50:0.95 when ``iou_thr`` is None."""
    thresholds = COCO_IOU_THRESHOLDS if iou_thr is None else (iou_thr,)
    key = (lambda g: bool(gt_filter(g))) if gt_filter else (lambda g: True)
    values = []
    for t in thresholds:
        matched, total = recall_counts(dets, gts, t, max_dets, key).get(True, (0, 0))
        if total == 0:
            return None
        values.append(matched / total)
    return float(np.mean(values))


def ar_occ(
    dets: Sequence[ImageDets],
    gts: Sequence[ImageGts],
    bins: OcclusionBins = OcclusionBins(),
    iou_thr: float = 0.5,
    max_dets: int = 500,
) -> Dict[str, Optional[float]]:
    """Recall restricted to each occlusion bin; ``None`` for an empty bin."""
    for i, g_img in enumerate(gts):
        for j, g in enumerate(g_img):
            if g.occlusion_ratio is None:
                raise InvalidArgumentError(
                    f"image {i}, annotation {j}: occlusion_ratio is required for ar_occ"
                )
    counts = recall_counts(dets, gts, iou_thr, max_dets, lambda g: bins.bin_of(g.occlusion_ratio))
    out: Dict[str, Optional[float]] = {}
    for name in OcclusionBins.NAMES:
        matched, total = counts.get(name, (0, 0))
        out[name] = matched / total if total else None
    return out


def dataset_stats(gts: Sequence[ImageGts], iou_thr: float = 0.5) -> Tuple[float, float]:
    """Mean objects per image and mean number of GT pairs per image with IoU above ``iou_thr``."""
    if len(gts) == 0:
        return 0.0, 0.0
    objects = 0
    overlaps = 0
    for g_img in gts:
        objects += len(g_img)
        if len(g_img) < 2:
            continue
        boxes = boxes_to_array([g.bbox for g in g_img])
        ious = pairwise_iou(boxes, boxes)
        overlaps += int(np.count_nonzero(np.triu(ious > iou_thr, k=1)))
    return objects / len(gts), overlaps / len(gts)


def evaluate(
    dets: Sequence[ImageDets],
    gts: Sequence[ImageGts],
    settings: EvalSettings = EvalSettings(),
    per_class: bool = False,
) -> EvalReport:
    _check_lengths(dets, gts)
    s = settings
    md = s.max_dets
    strata = {
        "s": lambda a: a < s.small_area,
        "m": lambda a: s.small_area <= a < s.medium_area,
        "l": lambda a: a >= s.medium_area,
    }

    def ap_at(thr=None, area=None):
        ths = s.iou_thresholds if thr is None else (thr,)
        vals = []
        for t in ths:
            v = average_precision(dets, gts, t, md, area)
            if v is None:
                return None
            vals.append(v)
        return float(np.mean(vals))

    def ar_at(area):
        vals = []
        for t in s.iou_thresholds:
            v = average_recall(dets, gts, t, md, lambda g: area(g.bbox.area))
            if v is None:
                return None
            vals.append(v)
        return float(np.mean(vals))

    have_ratios = all(g.occlusion_ratio is not None for g_img in gts for g in g_img)
    occ = (
        ar_occ(dets, gts, s.bins, s.occ_iou, s.occ_max_dets)
        if have_ratios
        else {name: None for name in OcclusionBins.NAMES}
    )
    objects, overlaps = dataset_stats(gts, s.stats_iou)
    per_class_ap = {}
    if per_class:
        per_cat = _ap_single(dets, gts, 0.5, md)
        per_class_ap = {str(c): per_cat[c] for c in sorted(per_cat)}
    return EvalReport(
        ap=ap_at(),
        ap50=ap_at(0.5),
        ap75=ap_at(0.75),
        ap_s=ap_at(area=strata["s"]),
        ap_m=ap_at(area=strata["m"]),
        ap_l=ap_at(area=strata["l"]),
        ar_s=ar_at(strata["s"]),
        ar_m=ar_at(strata["m"]),
        ar_l=ar_at(strata["l"]),
        ar_occ=occ,
        objects_per_image=objects,
        overlaps_per_image=overlaps,
        n_images=len(gts),
        per_class_ap50=per_class_ap,
    )


class OcclusionEvaluator(BaseEstimator):
    """Holds ground truth from ``fit`` and scores detections against it."""

    def __init__(self, settings: EvalSettings = EvalSettings(), per_class: bool = False):
        self.settings = settings
        self.per_class = per_class

    def fit(self, gts: Sequence[ImageGts], y=None):
        self.gts_ = [list(g) for g in gts]
        return self

    def evaluate(self, dets: Sequence[ImageDets]) -> EvalReport:
        if not hasattr(self, "gts_"):
            raise InvalidArgumentError("call fit(ground_truth) before evaluate")
        return evaluate(dets, self.gts_, self.settings, self.per_class)

    def score(self, dets: Sequence[ImageDets], y=None) -> float:
        report = self.evaluate(dets)
        return 0.0 if report.ap is None else report.ap
