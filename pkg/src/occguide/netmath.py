"""Framework-free forward math for the occlusion decoder and decoupled head.

Tensors are plain ``numpy`` arrays laid out ``(n, c, h, w)``. Parameters are
drawn from :class:`LcgRandom`, a 64-bit linear congruential generator, so
forward outputs are reproducible across platforms without any training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InvalidArgumentError
from .occlusion_map import OcclusionMap

__all__ = [
    "LcgRandom",
    "LossWeights",
    "CspWeights",
    "OemWeights",
    "DecoupleWeights",
    "check_tensor4",
    "pixel_shuffle",
    "pixel_unshuffle",
    "conv2d",
    "csp_mix",
    "oem_forward",
    "resample_nearest",
    "decouple_features",
    "l_occ",
    "l_cls",
    "l_loc",
    "smooth_l1",
    "l_total",
]

_MASK64 = (1 << 64) - 1


class LcgRandom:
    """Knuth's MMIX LCG: ``s <- s * 6364136223846793005 + 1442695040888963407 (mod 2**64)``.

    ``uniform`` takes the top 53 bits of the state, which gives identical
    doubles on every platform.
    """

    MULTIPLIER = 6364136223846793005
    INCREMENT = 1442695040888963407

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state * self.MULTIPLIER + self.INCREMENT) & _MASK64
        return self.state

    def uniform(self, size: int, low: float = -1.0, high: float = 1.0) -> np.ndarray:
        u = np.fromiter((self.next_u64() >> 11 for _ in range(size)), dtype=np.float64, count=size)
        return low + (high - low) * (u / float(1 << 53))


@dataclass(frozen=True)
class LossWeights:
    lambda_occ: float = 1.0
    lambda_cls: float = 1.0
    lambda_loc: float = 0.5

    def __post_init__(self):
        for name in ("lambda_occ", "lambda_cls", "lambda_loc"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0")


def check_tensor4(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise InvalidArgumentError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return x


def pixel_shuffle(x, r: int) -> np.ndarray:
    """Rearrange ``(n, c*r*r, h, w)`` into ``(n, c, h*r, w*r)``.

    ``out[n, k, i*r + di, j*r + dj] = x[n, k*r*r + di*r + dj, i, j]``.
    """
    x = check_tensor4(x)
    if int(r) != r or r < 1:
        raise InvalidArgumentError(f"upscale factor must be a positive integer, got {r!r}")
    n, c, h, w = x.shape
    if c % (r * r):
        raise InvalidArgumentError(f"channels ({c}) not divisible by r^2 ({r * r})")
    out = x.reshape(n, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return out.reshape(n, c // (r * r), h * r, w * r)


def pixel_unshuffle(x, r: int) -> np.ndarray:
    """Exact inverse of :func:`pixel_shuffle`."""
    x = check_tensor4(x)
    n, c, h, w = x.shape
    if h % r or w % r:
        raise InvalidArgumentError(f"spatial dims {h}x{w} not divisible by {r}")
    out = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return out.reshape(n, c * r * r, h // r, w // r)


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Stride-1 'same' cross-correlation with zero padding.

    ``kernel`` is ``(c_out, c_in, k, k)`` with odd ``k``.
    """
    n, c_in, h, w = x.shape
    c_out, kc, kh, kw = kernel.shape
    if kc != c_in:
        raise InvalidArgumentError(f"kernel expects {kc} input channels, got {c_in}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, c_out, h, w), dtype=np.float64)
    for di in range(kh):
        for dj in range(kw):
            patch = padded[:, :, di:di + h, dj:dj + w]
            out += np.einsum("oc,nchw->nohw", kernel[:, :, di, dj], patch)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def _depthwise_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    k = kernel.shape[-1]
    p = k // 2
    padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros_like(x)
    for di in range(k):
        for dj in range(k):
            out += kernel[None, :, di, dj, None, None] * padded[:, :, di:di + h, dj:dj + w]
    return out + bias.reshape(1, -1, 1, 1)


@dataclass
class CspWeights:
    """3x3 kernel ``(c/2, c/2, 3, 3)`` and bias ``(c/2,)`` for the transformed half."""

    kernel: np.ndarray
    bias: np.ndarray

    @classmethod
    def random(cls, channels: int, rng: LcgRandom, scale: float = 0.2) -> "CspWeights":
        half = channels // 2
        kernel = rng.uniform(half * half * 9, -scale, scale).reshape(half, half, 3, 3)
        bias = rng.uniform(half, -scale, scale)
        return cls(kernel, bias)

    @classmethod
    def identity(cls, channels: int) -> "CspWeights":
        half = channels // 2
        kernel = np.zeros((half, half, 3, 3))
        kernel[np.arange(half), np.arange(half), 1, 1] = 1.0
        return cls(kernel, np.zeros(half))


def csp_mix(x, weights: CspWeights) -> np.ndarray:
    """Split channels in half, run ``ReLU(conv3x3(.))`` on the first, keep the second."""
    x = check_tensor4(x)
    c = x.shape[1]
    if c % 2:
        raise InvalidArgumentError(f"csp_mix needs an even channel count, got {c}")
    half = c // 2
    mixed = np.maximum(conv2d(x[:, :half], weights.kernel, weights.bias), 0.0)
    return np.concatenate([mixed, x[:, half:]], axis=1)


@dataclass
class OemWeights:
    """Per-stage widening projections and CSP blocks plus the final 1-channel head.

    ``stage_proj[p]`` is a ``(width_p, c_in_p)`` 1x1 kernel applied after the
    pixel shuffle of stage ``p``, so every CSP block sees an even width.
    """

    stage_proj: List[np.ndarray]
    stage_csp: List[CspWeights]
    head: np.ndarray
    head_bias: float

    @classmethod
    def random(
        cls,
        in_channels: int,
        p_stages: int,
        seed: int,
        stage_widths: Sequence[int] = (8, 8),
    ) -> "OemWeights":
        rng = LcgRandom(seed)
        widths = list(stage_widths) + [stage_widths[-1] if stage_widths else 8] * max(0, p_stages - len(stage_widths))
        proj, csp = [], []
        c = in_channels
        for p in range(p_stages):
            if c % 4:
                raise InvalidArgumentError(
                    f"stage {p}: {c} channels cannot be pixel-shuffled by 2"
                )
            c_in = c // 4
            width = int(widths[p])
            if width % 2 or width < 2:
                raise InvalidArgumentError(f"stage width must be even and >= 2, got {width}")
            proj.append(rng.uniform(width * c_in, -0.5, 0.5).reshape(width, c_in))
            csp.append(CspWeights.random(width, rng))
            c = width
        head = rng.uniform(c, -0.5, 0.5)
        head_bias = float(rng.uniform(1, 0.0, 0.5)[0])
        return cls(proj, csp, head, head_bias)


def oem_forward(f, p_stages: int, weights: OemWeights, stride: int = 1) -> OcclusionMap:
    """Decode an occlusion map from encoder features.

    Each of the ``p_stages`` stages is ``pixel_shuffle(r=2)``, a 1x1 widening
    projection and :func:`csp_mix`; a 1x1 head reduces to one channel and the
    result is clamped to ``[0, 1]``. Only batch size 1 is accepted because the
    output is a single map.
    """
    x = check_tensor4(f, "f")
    if x.shape[0] != 1:
        raise InvalidArgumentError(f"oem_forward decodes one image at a time, got batch {x.shape[0]}")
    if len(weights.stage_proj) < p_stages:
        raise InvalidArgumentError(f"weights cover {len(weights.stage_proj)} stages, need {p_stages}")
    for p in range(p_stages):
        x = pixel_shuffle(x, 2)
        proj = weights.stage_proj[p]
        if proj.shape[1] != x.shape[1]:
            raise InvalidArgumentError(
                f"stage {p}: projection expects {proj.shape[1]} channels, got {x.shape[1]}"
            )
        x = np.einsum("oc,nchw->nohw", proj, x)
        x = csp_mix(x, weights.stage_csp[p])
    if weights.head.shape[0] != x.shape[1]:
        raise InvalidArgumentError(f"head expects {weights.head.shape[0]} channels, got {x.shape[1]}")
    out = np.einsum("c,chw->hw", weights.head, x[0]) + weights.head_bias
    h, w = out.shape
    return OcclusionMap(w * stride, h * stride, stride, np.clip(out, 0.0, 1.0))


def resample_nearest(values: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resize of a 2-D grid to ``(h, w)`` using cell centres."""
    src_h, src_w = values.shape
    rows = np.minimum(((np.arange(h) + 0.5) * src_h / h).astype(int), src_h - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * src_w / w).astype(int), src_w - 1)
    return values[np.ix_(rows, cols)]


@dataclass
class DecoupleWeights:
    """Shared 1x1 fusion conv with folded batch-norm, plus the depthwise large kernel.

    ``fuse`` is ``(c_out, c_in + 1)``; its last column multiplies the
    occlusion channel.
    """

    fuse: np.ndarray
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    lk_kernel: np.ndarray
    lk_bias: np.ndarray

    @classmethod
    def random(cls, in_channels: int, out_channels: int, lk_size: int = 13, seed: int = 0) -> "DecoupleWeights":
        _check_lk(lk_size)
        rng = LcgRandom(seed)
        fuse = rng.uniform(out_channels * (in_channels + 1), -0.5, 0.5).reshape(out_channels, in_channels + 1)
        bn_scale = rng.uniform(out_channels, 0.5, 1.5)
        bn_shift = rng.uniform(out_channels, -0.1, 0.1)
        lk = rng.uniform(out_channels * lk_size * lk_size, -0.05, 0.05).reshape(out_channels, lk_size, lk_size)
        lk_bias = rng.uniform(out_channels, -0.1, 0.1)
        return cls(fuse, bn_scale, bn_shift, lk, lk_bias)

    def with_identity_lk(self) -> "DecoupleWeights":
        c, k, _ = self.lk_kernel.shape
        lk = np.zeros_like(self.lk_kernel)
        lk[:, k // 2, k // 2] = 1.0
        return DecoupleWeights(self.fuse, self.bn_scale, self.bn_shift, lk, np.zeros(c))

    def with_occ_channel_zeroed(self) -> "DecoupleWeights":
        fuse = self.fuse.copy()
        fuse[:, -1] = 0.0
        return DecoupleWeights(fuse, self.bn_scale, self.bn_shift, self.lk_kernel, self.lk_bias)


def _check_lk(k: int) -> None:
    if int(k) != k or k < 1 or k % 2 == 0:
        raise InvalidArgumentError(f"large-kernel size must be a positive odd integer, got {k!r}")


def decouple_features(
    f, occ: OcclusionMap, weights: DecoupleWeights, lk_kernel: int = 13
) -> Tuple[np.ndarray, np.ndarray]:
    """Fuse an occlusion map into separate classification and localization paths.

    Returns ``(f_cls, f_loc)``: ``f_loc = ReLU(bn(conv1x1(cat(f, occ))))`` and
    ``f_cls = ReLU(depthwise_lk(f_loc))``.
    """
    _check_lk(lk_kernel)
    x = check_tensor4(f, "f")
    if weights.lk_kernel.shape[-1] != lk_kernel:
        raise InvalidArgumentError(
            f"weights carry a {weights.lk_kernel.shape[-1]}-wide kernel, lk_kernel={lk_kernel}"
        )
    n, c, h, w = x.shape
    if weights.fuse.shape[1] != c + 1:
        raise InvalidArgumentError(f"fusion conv expects {weights.fuse.shape[1] - 1} feature channels, got {c}")
    occ_plane = resample_nearest(occ.values, h, w)
    stacked = np.concatenate([x, np.broadcast_to(occ_plane, (n, 1, h, w))], axis=1)
    fused = np.einsum("oc,nchw->nohw", weights.fuse, stacked)
    f_loc = np.maximum(fused * weights.bn_scale.reshape(1, -1, 1, 1) + weights.bn_shift.reshape(1, -1, 1, 1), 0.0)
    f_cls = np.maximum(_depthwise_conv(f_loc, weights.lk_kernel, weights.lk_bias), 0.0)
    return f_cls, f_loc


def l_occ(pred: OcclusionMap, truth: OcclusionMap) -> Tuple[float, np.ndarray]:
    """Mean squared error between two maps and its gradient w.r.t. ``pred``."""
    p = pred.values if isinstance(pred, OcclusionMap) else np.asarray(pred, dtype=np.float64)
    t = truth.values if isinstance(truth, OcclusionMap) else np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise InvalidArgumentError(f"map dims differ: {p.shape} vs {t.shape}")
    diff = p - t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


_PROB_EPS = 1e-12


def l_cls(probs, labels, w_occ) -> float:
    """Occlusion-weighted cross-entropy averaged over samples.

    ``probs`` is ``(N, C)`` with rows summing to 1; probabilities are floored
    at 1e-12 before the log.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    w = np.asarray(w_occ, dtype=np.float64).reshape(-1)
    n, n_cls = probs.shape
    if len(labels) != n or len(w) != n:
        raise InvalidArgumentError("probs, labels and w_occ must have the same length")
    if n == 0:
        return 0.0
    if np.any(labels < 0) or np.any(labels >= n_cls):
        raise InvalidArgumentError(f"labels must lie in [0, {n_cls}), got {labels.tolist()}")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise InvalidArgumentError("each probability row must sum to 1")
    picked = np.maximum(probs[np.arange(n), labels], _PROB_EPS)
    return float(-np.sum(w * np.log(picked)) / n)


def smooth_l1(d, beta: float = 1.0) -> np.ndarray:
    if not beta > 0:
        raise InvalidArgumentError(f"beta must be positive, got {beta!r}")
    a = np.abs(np.asarray(d, dtype=np.float64))
    return np.where(a < beta, 0.5 * a * a / beta, a - 0.5 * beta)


def l_loc(pred_boxes, gt_boxes, w_occ, beta: float = 1.0) -> float:
    """Occlusion-weighted smooth-L1 over ``(x, y, w, h)``, summed (not averaged) over samples."""
    pred = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    w = np.asarray(w_occ, dtype=np.float64).reshape(-1)
    if pred.shape != gt.shape or len(w) != len(pred):
        raise InvalidArgumentError(
            f"length mismatch: {len(pred)} predictions, {len(gt)} targets, {len(w)} weights"
        )
    per_sample = smooth_l1(pred - gt, beta).sum(axis=1)
    return float(np.sum(w * per_sample))


def l_total(l_occ_value: float, l_cls_value: float, l_loc_value: float, weights: LossWeights = LossWeights()) -> float:
    return (
        weights.lambda_occ * l_occ_value
        + weights.lambda_cls * l_cls_value
        + weights.lambda_loc * l_loc_value
    )
