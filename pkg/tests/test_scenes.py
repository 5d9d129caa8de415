import numpy as np
import pytest

from occguide.exceptions import InvalidArgumentError
from occguide.geometry import BBox
from occguide.scenes import OcclusionBins, SceneGenParams, SceneObject, SceneSpec, crop_scene, synth_scene


def _bin_fractions(scene, bins=OcclusionBins()):
    names = [bins.bin_of(r) for r in scene.occlusion_ratios]
    return np.array([names.count(n) for n in OcclusionBins.NAMES], dtype=float)


class TestBins:
    @pytest.mark.parametrize("ratio,name", [(0.0, "none"), (1e-9, "partial"), (0.49, "partial"), (0.5, "heavy"), (1.0, "heavy")])
    def test_default_edges(self, ratio, name):
        assert OcclusionBins().bin_of(ratio) == name

    def test_edge_in_partial(self):
        assert OcclusionBins(edge_in_heavy=False).bin_of(0.5) == "partial"


class TestSceneSpec:
    def test_ratios_follow_draw_order(self):
        back = SceneObject(BBox(0, 0, 10, 10), 1)
        front = SceneObject(BBox(5, 0, 10, 10), 1)
        assert SceneSpec(50, 50, (back, front)).occlusion_ratios == (0.5, 0.0)
        assert SceneSpec(50, 50, (front, back)).occlusion_ratios == (0.5, 0.0)

    def test_crop_rescales_and_clips(self):
        scene = SceneSpec(100, 100, (SceneObject(BBox(10, 10, 10, 10), 1), SceneObject(BBox(45, 45, 10, 10), 2)))
        out = crop_scene(scene, BBox(0, 0, 50, 50), (100, 100))
        assert [o.bbox for o in out.objects] == [BBox(20, 20, 20, 20), BBox(90, 90, 10, 10)]
        assert len(crop_scene(scene, BBox(0, 0, 50, 50), (100, 100), min_visible=0.5).objects) == 1

    def test_fingerprint_changes_with_content(self):
        a = SceneSpec(10, 10, (SceneObject(BBox(0, 0, 1, 1), 1),))
        b = SceneSpec(10, 10, (SceneObject(BBox(0, 0, 1, 1), 2),))
        assert a.fingerprint() != b.fingerprint()


class TestSynth:
    def test_no_clusters(self):
        assert len(synth_scene(SceneGenParams(n_clusters=0), seed=1)) == 0

    def test_all_unoccluded(self):
        scene = synth_scene(SceneGenParams(quotas=(1.0, 0.0, 0.0)), seed=2)
        assert len(scene) == 75
        assert all(r == 0.0 for r in scene.occlusion_ratios)

    def test_default_quotas(self):
        totals = np.zeros(3)
        for seed in range(100):
            scene = synth_scene(seed=seed)
            assert len(scene) == 75
            totals += _bin_fractions(scene)
        frac = totals / totals.sum()
        assert np.all(np.abs(frac - np.array([0.7, 0.2, 0.1])) <= 0.1)

    def test_objects_inside_image(self):
        scene = synth_scene(seed=5)
        for o in scene.objects:
            b = o.bbox
            assert b.x >= 0 and b.y >= 0 and b.x2 <= 1024 and b.y2 <= 1024

    def test_deterministic(self):
        assert synth_scene(seed=9) == synth_scene(seed=9)
        assert synth_scene(seed=9) != synth_scene(seed=10)

    def test_infeasible_quota(self):
        with pytest.raises(InvalidArgumentError):
            synth_scene(SceneGenParams(objects_per_cluster=2, quotas=(0.0, 0.0, 1.0)))

    @pytest.mark.parametrize("kw", [{"quotas": (0.5, 0.5, 0.5)}, {"size_min": 0}, {"size_max": 600}])
    def test_param_validation(self, kw):
        with pytest.raises(InvalidArgumentError):
            SceneGenParams(**kw)
