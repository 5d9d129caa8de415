import numpy as np
import pytest

from occguide.detection import (
    DetectorPort,
    NmsParams,
    OracleDetector,
    OracleDetectorParams,
    nms,
    oracle_detect,
    recall_probability,
)
from occguide.exceptions import InvalidArgumentError
from occguide.geometry import BBox, Detection
from occguide.scenes import SceneObject, SceneSpec

from oracles import brute_nms


def _det(x, y, w, h, score, cat=1):
    return Detection(BBox(x, y, w, h), cat, score)


def random_dets(rng, n, n_cats=3):
    out = []
    for _ in range(n):
        x, y = rng.integers(0, 100, size=2)
        w, h = rng.integers(5, 40, size=2)
        # coarse scores make ties common
        out.append(_det(float(x), float(y), float(w), float(h), float(rng.integers(0, 10)) / 10, int(rng.integers(1, n_cats + 1))))
    return out


class TestNms:
    def test_empty(self):
        assert nms([]) == []

    def test_suppresses_overlap(self):
        a = _det(0, 0, 10, 10, 0.9)
        b = _det(1, 0, 10, 10, 0.8)
        assert nms([b, a]) == [a]

    def test_keeps_other_category(self):
        a = _det(0, 0, 10, 10, 0.9)
        b = _det(1, 0, 10, 10, 0.8, cat=2)
        assert nms([a, b]) == [a, b]

    def test_threshold_is_strict(self):
        a = _det(0, 0, 3, 1, 0.9)
        b = _det(1, 0, 3, 1, 0.8)  # IoU exactly 0.5
        assert nms([a, b]) == [a, b]

    def test_ties_keep_input_order(self):
        a = _det(0, 0, 10, 10, 0.5)
        b = _det(0, 0, 10, 10, 0.5)
        assert nms([a, b])[0] is a
        assert nms([b, a])[0] is b

    def test_max_detections(self):
        dets = [_det(20 * i, 0, 10, 10, 0.5) for i in range(10)]
        assert len(nms(dets, NmsParams(max_detections=4))) == 4

    def test_matches_brute_force(self, rng):
        for _ in range(200):
            dets = random_dets(rng, int(rng.integers(0, 30)))
            got = nms(dets, NmsParams(0.5, 20))
            ref = brute_nms([(d.bbox.as_tuple(), d.category, d.score) for d in dets], 0.5, 20)
            assert [id(d) for d in got] == [id(dets[i]) for i in ref]

    def test_idempotent(self, rng):
        for _ in range(100):
            once = nms(random_dets(rng, int(rng.integers(0, 40))))
            assert nms(once) == once

    @pytest.mark.parametrize("kw", [{"iou_threshold": 0}, {"iou_threshold": 1.5}, {"max_detections": 0}])
    def test_param_validation(self, kw):
        with pytest.raises(InvalidArgumentError):
            NmsParams(**kw)


def _single(w, h, img=128):
    return SceneSpec(img, img, (SceneObject(BBox(10, 10, w, h), 1),))


class TestOracle:
    def test_probability_formula(self):
        p = OracleDetectorParams(a_ref=100, kappa=0.5)
        assert recall_probability(50, 0.0, p) == 0.5
        assert recall_probability(400, 0.0, p) == 1.0
        assert recall_probability(400, 1.0, p) == 0.5

    def test_always_detects_large_unoccluded(self):
        params = OracleDetectorParams(a_ref=1.0, kappa=0.0, jitter_sigma=0.0)
        dets, _ = oracle_detect(_single(40, 30), (128, 128), params)
        assert len(dets) == 1 and dets[0].bbox == BBox(10, 10, 40, 30) and dets[0].score == 1.0

    def test_kappa_one_never_detects_fully_covered(self):
        back = SceneObject(BBox(10, 10, 20, 20), 1)
        front = SceneObject(BBox(5, 5, 40, 40), 2)
        scene = SceneSpec(128, 128, (back, front))
        assert scene.occlusion_ratios == (1.0, 0.0)
        for seed in range(50):
            dets, _ = oracle_detect(scene, (128, 128), OracleDetectorParams(seed=seed, a_ref=1.0, kappa=1.0))
            assert [d.category for d in dets] == [2]

    def test_deterministic(self):
        scene = _single(30, 30)
        p = OracleDetectorParams(seed=3, a_ref=2000)
        a = oracle_detect(scene, (128, 128), p)
        b = oracle_detect(scene, (128, 128), p)
        assert a[0] == b[0] and a[1] == b[1]

    def test_detection_rate_monte_carlo(self):
        scene = _single(32, 64)  # area 2048
        params = [OracleDetectorParams(seed=s, a_ref=4096, jitter_sigma=0.0) for s in range(10_000)]
        hits = sum(len(oracle_detect(scene, (128, 128), p)[0]) for p in params)
        assert abs(hits / 10_000 - 0.5) <= 0.02

    def test_input_scaling(self):
        params = OracleDetectorParams(a_ref=1.0, jitter_sigma=0.0)
        dets, occ = oracle_detect(_single(40, 30), (256, 64), params)
        assert dets[0].bbox == BBox(20, 5, 80, 15)
        assert (occ.img_w, occ.img_h) == (256, 64)

    def test_map_is_highlighted_truth(self):
        dets, occ = oracle_detect(_single(40, 30), (128, 128), OracleDetectorParams(a_ref=1.0))
        assert occ.values.max() > 0
        assert occ.values.max() <= 0.3 + 1e-12

    def test_estimator_satisfies_port(self):
        det = OracleDetector(a_ref=1.0, random_state=4)
        assert isinstance(det, DetectorPort)
        ref = oracle_detect(_single(20, 20), (128, 128), OracleDetectorParams(seed=4, a_ref=1.0))
        assert det.detect(_single(20, 20), (128, 128))[0] == ref[0]
        assert OracleDetector.from_params(det.to_params()).get_params() == det.get_params()

    def test_param_validation(self):
        with pytest.raises(InvalidArgumentError):
            OracleDetectorParams(kappa=2.0)
        with pytest.raises(InvalidArgumentError):
            OracleDetectorParams(a_ref=0)
