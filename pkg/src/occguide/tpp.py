"""Two-phase progressive refinement: coarse pass, occlusion-guided crops, fine passes, merge."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

from sklearn.base import BaseEstimator

from .detection import DetectorPort, NmsParams, nms
from .exceptions import DetectorError, InvalidArgumentError
from .geometry import BBox, Detection, remap_box
from .occlusion_map import OcclusionMap
from .region_select import Region, SelectParams, select_regions
from .scenes import SceneSpec, crop_scene

__all__ = ["run_tpp", "coarse_pass", "augment_crops", "TwoPhaseDetector"]

DEFAULT_INPUT_SIZE = (1024, 1024)


def _to_source(dets: Sequence[Detection], region: BBox, input_size, bounds) -> List[Detection]:
    out = []
    for d in dets:
        b = remap_box(d.bbox, region, input_size, bounds=bounds)
        if b is not None:
            out.append(Detection(b, d.category, d.score))
    return out


def _run_pass(detector: DetectorPort, image, input_size, name: str):
    try:
        return detector.detect(image, input_size)
    except Exception as exc:  # noqa: BLE001 - re-raised with the pass identity
        raise DetectorError(name, exc) from exc


def coarse_pass(image, detector: DetectorPort, input_size=DEFAULT_INPUT_SIZE) -> Tuple[List[Detection], OcclusionMap]:
    """Detect on the whole image; detections are returned in source coordinates."""
    full = BBox(0.0, 0.0, image.width, image.height)
    dets, occ = _run_pass(detector, image, input_size, "coarse")
    return _to_source(dets, full, input_size, (image.width, image.height)), occ


def run_tpp(
    image,
    detector: DetectorPort,
    select_params: SelectParams = SelectParams(),
    nms_params: NmsParams = NmsParams(),
    n_sub: Optional[int] = None,
    fine_size: Tuple[int, int] = DEFAULT_INPUT_SIZE,
    seed: int = 0,
    coarse_size: Optional[Tuple[int, int]] = None,
    occlusion_map: Optional[OcclusionMap] = None,
    n_jobs: int = 1,
    return_regions: bool = False,
):
    """Coarse-to-fine detection guided by the occlusion map.

    ``image`` is any handle exposing ``width``, ``height`` and
    ``crop(region, size)`` (e.g. :class:`SceneSpec`). The coarse pass runs at
    ``coarse_size`` (defaults to ``fine_size``); up to ``n_sub`` regions are
    picked from its occlusion map (or from ``occlusion_map`` when supplied),
    each is cropped to ``fine_size`` and detected again, and everything is
    merged by :func:`nms` with coarse detections listed before fine ones.
    Fine passes may run on ``n_jobs`` threads; the result does not depend on it.
    """
    coarse_size = fine_size if coarse_size is None else coarse_size
    n_sub = select_params.n_regions if n_sub is None else n_sub
    if n_sub < 0:
        raise InvalidArgumentError(f"n_sub must be >= 0, got {n_sub}")
    bounds = (image.width, image.height)

    coarse, occ = coarse_pass(image, detector, coarse_size)
    if occlusion_map is not None:
        occ = occlusion_map
    regions: List[Region] = []
    if n_sub > 0:
        params = dataclasses.replace(select_params, n_regions=n_sub)
        regions = select_regions(occ, image.width, image.height, params, seed=seed)

    def fine(q_region):
        q, region = q_region
        crop = image.crop(region.rect, fine_size)
        dets, _ = _run_pass(detector, crop, fine_size, f"fine[{q}]")
        return _to_source(dets, region.rect, fine_size, bounds)

    jobs = list(enumerate(regions))
    if n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            fine_results = list(pool.map(fine, jobs))
    else:
        fine_results = [fine(j) for j in jobs]

    merged = list(coarse)
    for dets in fine_results:
        merged.extend(dets)
    result = nms(merged, nms_params)
    if return_regions:
        return result, regions
    return result


def augment_crops(
    scene: SceneSpec,
    occ: OcclusionMap,
    select_params: SelectParams = SelectParams(),
    fine_size: Tuple[int, int] = DEFAULT_INPUT_SIZE,
    seed: int = 0,
    min_visible: float = 0.25,
) -> List[SceneSpec]:
    """Turn the occlusion-selected regions of ``scene`` into extra training scenes.

    Annotations are clipped to each region and rescaled to ``fine_size``;
    those with less than ``min_visible`` of their area inside are dropped.
    """
    regions = select_regions(occ, scene.img_w, scene.img_h, select_params, seed=seed)
    return [crop_scene(scene, r.rect, fine_size, min_visible=min_visible) for r in regions]


class TwoPhaseDetector(BaseEstimator):
    """Estimator front-end for :func:`run_tpp`.

    ``predict`` maps a list of image handles to per-image detection lists.
    Setting ``n_sub=0`` gives the single-phase (coarse only) baseline.
    """

    def __init__(
        self,
        detector=None,
        select_params: SelectParams = SelectParams(),
        nms_params: NmsParams = NmsParams(),
        n_sub: int = 3,
        fine_size=DEFAULT_INPUT_SIZE,
        coarse_size=None,
        random_state: int = 0,
        n_jobs: int = 1,
    ):
        self.detector = detector
        self.select_params = select_params
        self.nms_params = nms_params
        self.n_sub = n_sub
        self.fine_size = fine_size
        self.coarse_size = coarse_size
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if self.detector is None:
            raise InvalidArgumentError("TwoPhaseDetector needs a detector")
        if not hasattr(self.detector, "detect"):
            raise InvalidArgumentError("detector must provide detect(image, input_size)")
        self.detector_ = self.detector
        return self

    def predict(self, X, occlusion_maps: Optional[Sequence[Optional[OcclusionMap]]] = None) -> List[List[Detection]]:
        if not hasattr(self, "detector_"):
            self.fit()
        maps = occlusion_maps if occlusion_maps is not None else [None] * len(X)
        if len(maps) != len(X):
            raise InvalidArgumentError("need one occlusion map (or None) per image")
        return [
            run_tpp(
                image,
                self.detector_,
                self.select_params,
                self.nms_params,
                n_sub=self.n_sub,
                fine_size=tuple(self.fine_size),
                seed=self.random_state,
                coarse_size=None if self.coarse_size is None else tuple(self.coarse_size),
                occlusion_map=occ,
                n_jobs=self.n_jobs,
            )
            for image, occ in zip(X, maps)
        ]
