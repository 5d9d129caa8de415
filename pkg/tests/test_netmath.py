import math

import numpy as np
import pytest

from occguide import netmath as nm
from occguide.exceptions import InvalidArgumentError
from occguide.occlusion_map import OcclusionMap


def test_lcg_is_reproducible_and_documented():
    a = nm.LcgRandom(42)
    first = a.next_u64()
    assert first == (42 * 6364136223846793005 + 1442695040888963407) % 2**64
    np.testing.assert_array_equal(nm.LcgRandom(7).uniform(16), nm.LcgRandom(7).uniform(16))
    u = nm.LcgRandom(1).uniform(1000, 0.0, 1.0)
    assert u.min() >= 0 and u.max() < 1


class TestPixelShuffle:
    def test_r1_identity(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        np.testing.assert_array_equal(nm.pixel_shuffle(x, 1), x)

    def test_four_channels_to_block(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        out = nm.pixel_shuffle(x, 2)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out[0, 0], [[1.0, 2.0], [3.0, 4.0]])

    def test_index_formula(self, rng):
        x = rng.standard_normal((2, 12, 3, 4))
        r = 2
        out = nm.pixel_shuffle(x, r)
        for n in range(2):
            for k in range(3):
                for i in range(3):
                    for j in range(4):
                        for di in range(r):
                            for dj in range(r):
                                assert out[n, k, i * r + di, j * r + dj] == x[n, k * r * r + di * r + dj, i, j]

    def test_permutation_and_inverse(self, rng):
        x = rng.standard_normal((2, 8, 3, 5))
        out = nm.pixel_shuffle(x, 2)
        assert out.shape == (2, 2, 6, 10)
        np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(x.ravel()))
        np.testing.assert_array_equal(nm.pixel_unshuffle(out, 2), x)

    def test_bad_channels(self):
        with pytest.raises(InvalidArgumentError):
            nm.pixel_shuffle(np.zeros((1, 6, 2, 2)), 2)


class TestCsp:
    def test_zero_input(self):
        w = nm.CspWeights.random(6, nm.LcgRandom(3))
        out = nm.csp_mix(np.zeros((1, 6, 4, 4)), w)
        assert not out[:, 3:].any()
        expected = np.maximum(w.bias, 0.0)
        np.testing.assert_array_equal(out[0, :3], np.broadcast_to(expected[:, None, None], (3, 4, 4)))

    def test_identity_kernel(self, rng):
        x = np.abs(rng.standard_normal((2, 8, 5, 7)))
        np.testing.assert_array_equal(nm.csp_mix(x, nm.CspWeights.identity(8)), x)

    def test_shape(self, rng):
        x = rng.standard_normal((1, 4, 6, 9))
        assert nm.csp_mix(x, nm.CspWeights.random(4, nm.LcgRandom(0))).shape == x.shape

    def test_odd_channels(self):
        with pytest.raises(InvalidArgumentError):
            nm.csp_mix(np.zeros((1, 3, 2, 2)), nm.CspWeights.identity(2))

    def test_conv_matches_loops(self, rng):
        x = rng.standard_normal((1, 2, 4, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        out = nm.conv2d(x, k)
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for o in range(3):
            for i in range(4):
                for j in range(5):
                    ref = sum(
                        k[o, c, di, dj] * padded[0, c, i + di, j + dj]
                        for c in range(2) for di in range(3) for dj in range(3)
                    )
                    assert out[0, o, i, j] == pytest.approx(ref, abs=1e-12)


class TestOem:
    def test_p0_keeps_dims(self, rng):
        f = rng.standard_normal((1, 5, 6, 7))
        occ = nm.oem_forward(f, 0, nm.OemWeights.random(5, 0, 1))
        assert occ.shape == (6, 7)

    def test_p2_quadruples(self, rng):
        f = rng.standard_normal((1, 16, 4, 4))
        occ = nm.oem_forward(f, 2, nm.OemWeights.random(16, 2, 9))
        assert occ.shape == (16, 16)

    def test_range_on_random_inputs(self, rng):
        for seed in range(10):
            f = rng.standard_normal((1, 16, 3, 5)) * 5
            occ = nm.oem_forward(f, 2, nm.OemWeights.random(16, 2, seed))
            assert occ.values.min() >= 0 and occ.values.max() <= 1

    def test_deterministic_from_seed(self, rng):
        f = rng.standard_normal((1, 16, 4, 4))
        a = nm.oem_forward(f, 2, nm.OemWeights.random(16, 2, 5))
        b = nm.oem_forward(f, 2, nm.OemWeights.random(16, 2, 5))
        assert a == b

    def test_channel_errors_propagate(self):
        with pytest.raises(InvalidArgumentError):
            nm.OemWeights.random(6, 2, 0)


class TestDecouple:
    def _setup(self, rng, c=8, c_out=6, k=13):
        f = rng.standard_normal((1, c, 16, 16))
        occ = OcclusionMap(64, 64, 4, rng.random((16, 16)))
        return f, occ, nm.DecoupleWeights.random(c, c_out, k, seed=11)

    def test_identity_kernel_makes_paths_equal(self, rng):
        f, occ, w = self._setup(rng)
        f_cls, f_loc = nm.decouple_features(f, occ, w.with_identity_lk(), 13)
        np.testing.assert_array_equal(f_cls, f_loc)

    def test_occ_channel_zeroed_ignores_map(self, rng):
        f, occ, w = self._setup(rng)
        w0 = w.with_occ_channel_zeroed()
        other = OcclusionMap(64, 64, 4, rng.random((16, 16)))
        a = nm.decouple_features(f, occ, w0)
        b = nm.decouple_features(f, other, w0)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        # with the occlusion weights live, the map does matter
        assert not np.array_equal(nm.decouple_features(f, occ, w)[1], nm.decouple_features(f, other, w)[1])

    def test_shapes(self, rng):
        f, occ, w = self._setup(rng)
        f_cls, f_loc = nm.decouple_features(f, occ, w)
        assert f_cls.shape == f_loc.shape == (1, 6, 16, 16)

    def test_map_is_resampled(self, rng):
        f = rng.standard_normal((1, 4, 8, 8))
        occ = OcclusionMap(32, 32, 1, rng.random((32, 32)))
        w = nm.DecoupleWeights.random(4, 2, 3, seed=1)
        assert nm.decouple_features(f, occ, w, 3)[0].shape == (1, 2, 8, 8)

    def test_even_kernel_rejected(self, rng):
        f, occ, w = self._setup(rng)
        with pytest.raises(InvalidArgumentError):
            nm.decouple_features(f, occ, w, 12)


class TestLosses:
    def test_l_occ_zero(self, rng):
        m = OcclusionMap(8, 8, 1, rng.random((8, 8)))
        loss, grad = nm.l_occ(m, m)
        assert loss == 0.0 and not grad.any()

    def test_l_occ_constant_offset(self, rng):
        t = rng.random((8, 8)) * 0.5
        loss, _ = nm.l_occ(OcclusionMap(8, 8, 1, t + 0.25), OcclusionMap(8, 8, 1, t))
        assert loss == pytest.approx(0.0625, abs=1e-15)

    def test_l_occ_gradient_finite_differences(self, rng):
        h = 1e-5
        for _ in range(10):
            p, t = rng.random((8, 8)), rng.random((8, 8))
            _, grad = nm.l_occ(p, t)
            for idx in np.ndindex(8, 8):
                up, dn = p.copy(), p.copy()
                up[idx] += h
                dn[idx] -= h
                fd = (nm.l_occ(up, t)[0] - nm.l_occ(dn, t)[0]) / (2 * h)
                assert fd == pytest.approx(grad[idx], rel=1e-5)

    def test_l_occ_dim_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            nm.l_occ(OcclusionMap.zeros(8, 8, 1), OcclusionMap.zeros(8, 8, 2))

    def test_l_cls_perfect(self):
        probs = np.eye(4)[[0, 2, 3]]
        assert nm.l_cls(probs, [0, 2, 3], [1, 2, 1]) == 0.0

    def test_l_cls_single_sample(self):
        p = math.exp(-1)
        assert nm.l_cls([[p, 1 - p]], [0], [1]) == pytest.approx(1.0, abs=1e-15)

    def test_l_cls_weight_doubles(self, rng):
        probs = rng.dirichlet(np.ones(3), size=4)
        labels = [0, 1, 2, 1]
        one = nm.l_cls(probs, labels, [1, 1, 1, 1])
        two = nm.l_cls(probs, labels, [1, 2, 1, 1])
        share = -math.log(probs[1, 1]) / 4
        assert two - one == pytest.approx(share, rel=1e-12)

    def test_l_cls_clamps_zero_probability(self):
        assert nm.l_cls([[0.0, 1.0]], [0], [1]) == pytest.approx(-math.log(1e-12))

    def test_l_cls_bad_label(self):
        with pytest.raises(InvalidArgumentError):
            nm.l_cls([[0.5, 0.5]], [2], [1])

    def test_l_loc_values(self):
        gt = np.zeros((1, 4))
        assert nm.l_loc(gt, gt, [1]) == 0.0
        assert nm.l_loc([[2.0, 0, 0, 0]], gt, [1], beta=1.0) == 1.5
        assert nm.l_loc([[0.5, 0, 0, 0]], gt, [2], beta=1.0) == 0.25

    def test_l_loc_sums_over_samples(self, rng):
        pred, gt = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        total = nm.l_loc(pred, gt, np.ones(5))
        parts = sum(nm.l_loc(pred[i:i + 1], gt[i:i + 1], [1]) for i in range(5))
        assert total == pytest.approx(parts, rel=1e-12)

    def test_l_loc_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            nm.l_loc(np.zeros((2, 4)), np.zeros((3, 4)), [1, 1])

    def test_l_total(self):
        w = nm.LossWeights()
        assert (w.lambda_occ, w.lambda_cls, w.lambda_loc) == (1.0, 1.0, 0.5)
        assert nm.l_total(0, 0, 0) == 0.0
        assert nm.l_total(1, 1, 1, w) == 2.5
        assert nm.l_total(3, 4, 5, nm.LossWeights(0, 0, 0)) == 0.0

    def test_negative_weights_rejected(self):
        with pytest.raises(InvalidArgumentError):
            nm.LossWeights(-1.0, 1.0, 1.0)
