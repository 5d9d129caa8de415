"""Self-checks for the netmath forward paths and losses (run by ``occguide netcheck``)."""

from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from . import netmath as nm
from .occlusion_map import OcclusionMap


def _grad_check(seed: int = 0, trials: int = 50, h: float = 1e-5) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        pred = OcclusionMap(8, 8, 1, rng.random((8, 8)))
        truth = OcclusionMap(8, 8, 1, rng.random((8, 8)))
        _, grad = nm.l_occ(pred, truth)
        fd = np.empty_like(grad)
        for idx in np.ndindex(8, 8):
            up = pred.values.copy()
            dn = pred.values.copy()
            up[idx] += h
            dn[idx] -= h
            fd[idx] = (nm.l_occ(up, truth.values)[0] - nm.l_occ(dn, truth.values)[0]) / (2 * h)
        rel = np.abs(fd - grad) / np.maximum(np.abs(grad), 1e-12)
        worst = max(worst, float(rel.max()))
    return worst < 1e-5, f"max rel err {worst:.2e}"


def _shuffle_roundtrip(seed: int = 0) -> Tuple[bool, str]:
    x = np.random.default_rng(seed).standard_normal((2, 8, 3, 5))
    back = nm.pixel_unshuffle(nm.pixel_shuffle(x, 2), 2)
    return bool(np.array_equal(back, x)), "bitwise round trip"


def _oem_shapes(seed: int = 0) -> Tuple[bool, str]:
    f = np.random.default_rng(seed).standard_normal((1, 16, 4, 4))
    occ = nm.oem_forward(f, 2, nm.OemWeights.random(16, 2, seed))
    ok = occ.shape == (16, 16) and occ.values.min() >= 0 and occ.values.max() <= 1
    return ok, f"map {occ.shape[0]}x{occ.shape[1]}"


def _loss_linearity(seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(5), size=6)
    labels = rng.integers(0, 5, size=6)
    w = np.ones(6)
    w2 = w.copy()
    w2[2] = 2.0
    base = nm.l_cls(probs, labels, w)
    cls_ok = np.isclose(nm.l_cls(probs, labels, w2) - base, nm.l_cls(probs[2:3], labels[2:3], [1.0]) / 6, rtol=1e-12)
    pred = rng.standard_normal((6, 4))
    gt = rng.standard_normal((6, 4))
    one = nm.l_loc(pred[2:3], gt[2:3], [1.0])
    loc_ok = np.isclose(nm.l_loc(pred, gt, w2) - nm.l_loc(pred, gt, w), one, rtol=1e-12)
    return bool(cls_ok and loc_ok), "weight 2 doubles a sample's share"


def _decouple_identity(seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((1, 8, 16, 16))
    occ = OcclusionMap(16, 16, 1, rng.random((16, 16)))
    weights = nm.DecoupleWeights.random(8, 6, 13, seed).with_identity_lk()
    f_cls, f_loc = nm.decouple_features(f, occ, weights, 13)
    return bool(np.array_equal(f_cls, f_loc)), "identity large kernel"


def _decouple_wiring(seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((1, 8, 16, 16))
    weights = nm.DecoupleWeights.random(8, 6, 13, seed).with_occ_channel_zeroed()
    a = nm.decouple_features(f, OcclusionMap(16, 16, 1, rng.random((16, 16))), weights)
    b = nm.decouple_features(f, OcclusionMap(16, 16, 1, rng.random((16, 16))), weights)
    return bool(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])), "occ channel zeroed"


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("pixel_shuffle round trip", _shuffle_roundtrip),
    ("oem_forward P=2 shape/range", _oem_shapes),
    ("l_occ gradient vs finite diff", _grad_check),
    ("l_cls/l_loc weight linearity", _loss_linearity),
    ("decouple identity kernel", _decouple_identity),
    ("decouple occ wiring", _decouple_wiring),
]


def run_checks(echo=print) -> bool:
    width = max(len(name) for name, _ in CHECKS)
    all_ok = True
    for name, check in CHECKS:
        ok, detail = check()
        all_ok &= ok
        echo(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return all_ok
