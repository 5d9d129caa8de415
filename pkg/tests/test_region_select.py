from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from occguide.exceptions import InvalidArgumentError
from occguide.geometry import BBox
from occguide.occlusion_map import OcclusionMap
from occguide.region_select import (
    MinSizeRule,
    SelectParams,
    cluster_mask,
    correct_regions,
    kmeans,
    occlusion_mask,
    select_regions,
)

DEFAULTS = SelectParams()


def _blob_map(blobs, rows=256, cols=256, stride=4, value=1.0):
    v = np.zeros((rows, cols))
    for r, c, h, w in blobs:
        v[r:r + h, c:c + w] = value
    return OcclusionMap(cols * stride, rows * stride, stride, v)


def _contains(outer: BBox, inner: BBox):
    return outer.x <= inner.x and outer.y <= inner.y and inner.x2 <= outer.x2 and inner.y2 <= outer.y2


class TestMask:
    def test_zero_map(self):
        assert not occlusion_mask(OcclusionMap.zeros(400, 400, 4)).any()
        assert select_regions(OcclusionMap.zeros(400, 400, 4)) == []

    def test_ones_map(self):
        occ = OcclusionMap(400, 400, 4, np.ones((100, 100)))
        assert occlusion_mask(occ).all()

    def test_strict_threshold(self):
        v = np.zeros((40, 40))
        v.flat[:45] = 1.0
        assert not occlusion_mask(OcclusionMap(40, 40, 1, v)).any()
        v.flat[45] = 1.0
        assert occlusion_mask(OcclusionMap(40, 40, 1, v)).all()

    def test_ragged_edge_windows(self):
        v = np.zeros((50, 50))
        v[45:, 45:] = 1.0  # 25 cells in the corner window
        params = SelectParams(thr=20)
        mask = occlusion_mask(OcclusionMap(50, 50, 1, v), params)
        assert mask[40:, 40:].all() and mask.sum() == 100

    def test_windows_do_not_overlap(self):
        v = np.zeros((80, 80))
        v[35:45, 35:45] = 1.0  # split across four windows, 25 cells each
        assert not occlusion_mask(OcclusionMap(80, 80, 1, v)).any()


class TestKmeans:
    def test_two_clear_clusters(self):
        pts = np.array([[0, 0], [0, 1], [1, 0], [50, 50], [50, 51], [51, 50]], dtype=float)
        labels, centers = kmeans(pts, 2, seed=3)
        assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1 and labels[0] != labels[3]

    def test_k_capped_by_distinct_points(self):
        labels, centers = kmeans(np.zeros((5, 2)), 3)
        assert len(centers) == 1 and not labels.any()

    def test_seeded(self, rng):
        pts = rng.random((200, 2)) * 100
        a = kmeans(pts, 4, seed=9)
        b = kmeans(pts, 4, seed=9)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestClusterMask:
    def test_empty(self):
        assert cluster_mask(np.zeros((5, 5), bool), 3) == []

    def test_two_blobs(self):
        mask = np.zeros((100, 100), bool)
        mask[0:10, 0:10] = True
        mask[80:90, 70:95] = True
        rects = sorted(cluster_mask(mask, 2, seed=1, stride=4), key=lambda b: b.x)
        assert rects == [BBox(0, 0, 40, 40), BBox(280, 320, 100, 40)]

    def test_single_blob_three_clusters_cover_it(self):
        mask = np.zeros((60, 60), bool)
        mask[10:50, 20:40] = True
        rects = cluster_mask(mask, 3, seed=0)
        assert len(rects) == 3
        for r, c in np.argwhere(mask):
            assert any(b.x <= c < b.x2 and b.y <= r < b.y2 for b in rects)

    def test_scale(self):
        mask = np.zeros((10, 10), bool)
        mask[2, 3] = True
        assert cluster_mask(mask, 1, stride=2, scale=(1.5, 2.0)) == [BBox(9, 8, 3, 4)]

    def test_rejects_zero_clusters(self):
        with pytest.raises(InvalidArgumentError):
            cluster_mask(np.ones((2, 2), bool), 0)


class TestCorrect:
    def test_centred_growth(self):
        (r,) = correct_regions([BBox(500, 500, 10, 10)], 1024, 1024, SelectParams(min_size_rule="fixed"))
        assert r.rect == BBox(355, 355, 300, 300)

    def test_default_min_is_quarter_when_larger(self):
        (r,) = correct_regions([BBox(500, 500, 10, 10)], 2000, 1000)
        assert (r.rect.w, r.rect.h) == (500, 300)

    def test_corner_shift(self):
        (r,) = correct_regions([BBox(0, 0, 10, 10)], 1024, 1024)
        assert r.rect == BBox(0, 0, 300, 300)
        (r,) = correct_regions([BBox(1014, 1014, 10, 10)], 1024, 1024)
        assert r.rect == BBox(724, 724, 300, 300)

    def test_large_rect_unchanged(self):
        rect = BBox(100, 200, 400, 350)
        assert correct_regions([rect], 1024, 1024)[0].rect == rect

    def test_small_image_uses_whole_axis(self):
        (r,) = correct_regions([BBox(10, 10, 20, 20)], 200, 600)
        assert r.rect.x == 0 and r.rect.w == 200 and r.rect.h == 300

    def test_rect_outside_dropped(self):
        assert correct_regions([BBox(2000, 0, 10, 10)], 1024, 1024) == []

    @pytest.mark.parametrize("rule,expected", [("max", (300, 300)), ("fixed", (300, 300)), ("quarter", (100, 150))])
    def test_min_size_rules(self, rule, expected):
        assert SelectParams(min_size_rule=rule).min_size(400, 600) == expected

    def test_param_validation(self):
        with pytest.raises(InvalidArgumentError):
            SelectParams(thr=0)
        with pytest.raises(InvalidArgumentError):
            SelectParams(h_w=2.5)
        with pytest.raises(ValueError):
            SelectParams(min_size_rule="biggest")


class TestSelect:
    def test_three_blobs(self):
        blobs = [(10, 10, 12, 12), (120, 200, 12, 12), (220, 40, 12, 12)]
        occ = _blob_map(blobs)
        regions = select_regions(occ, seed=5)
        assert len(regions) == 3
        for r, c, h, w in blobs:
            blob = BBox(c * 4, r * 4, w * 4, h * 4)
            assert any(_contains(reg.rect, blob) for reg in regions)
        for reg in regions:
            assert reg.rect.w >= 300 and reg.rect.h >= 300
            assert reg.rect.x >= 0 and reg.rect.x2 <= 1024

    def test_source_rescaling(self):
        occ = _blob_map([(100, 100, 20, 20)])
        (r,) = select_regions(occ, 2048, 2048, SelectParams(n_regions=1))
        blob = BBox(2 * 400, 2 * 400, 2 * 80, 2 * 80)
        assert _contains(r.rect, blob) and r.rect.w == 512

    def test_threshold_monotone(self, rng):
        for _ in range(20):
            v = rng.random((64, 64)) * rng.random()
            occ = OcclusionMap(256, 256, 4, v)
            prev = None
            for thr in (10, 45, 200, 800):
                m = occlusion_mask(occ, SelectParams(thr=thr))
                if prev is not None:
                    assert not (m & ~prev).any()
                prev = m

    def test_thread_determinism(self):
        occ = _blob_map([(30, 30, 40, 8), (150, 60, 10, 60), (200, 200, 20, 20), (90, 180, 5, 5)], value=0.6)
        ref = select_regions(occ, seed=11)
        with ThreadPoolExecutor(8) as pool:
            results = list(pool.map(lambda _: select_regions(occ, seed=11), range(32)))
        assert all(r == ref for r in results)
