"""Differentiable full-reference distance measures.

All four evaluators build autodiff graphs, so the attack can pull gradients
through them. Sign convention: larger value = more distorted, uniformly.
The two similarity-style measures are negated, so a perfect match scores -1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .features import FeatureExtractor

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0

_EPS = 1e-10


def _as3d(t) -> ad.Tensor:
    t = ad.as_tensor(t)
    if t.value.ndim == 2:
        raise ad.ShapeError(f"expected H x W x C image, got {t.shape}")
    return t


def _check_same_shape(x: ad.Tensor, x0: ad.Tensor, op: str):
    if x.value.shape != x0.value.shape:
        raise ad.ShapeError(f"{op}: shape mismatch {x.value.shape} vs {x0.value.shape}")


def to_gray(x: ad.Tensor) -> ad.Tensor:
    """Fixed differentiable luminance front-end; pass-through for 1-channel."""
    if x.value.shape[2] == 1:
        return x
    return ad.channel_weighted_sum(x, LUMA_WEIGHTS)


def chebyshev(x, x0) -> ad.Tensor:
    """Max absolute pixel difference across all positions and channels."""
    x, x0 = _as3d(x), _as3d(x0)
    _check_same_shape(x, x0, "chebyshev")
    return ad.tmax(ad.absolute(x - x0))


def neg_ssim(x, x0) -> ad.Tensor:
    """-SSIM on the luminance plane; 11x11 Gaussian window, sigma 1.5."""
    x, x0 = _as3d(x), _as3d(x0)
    _check_same_shape(x, x0, "neg_ssim")
    h, w = x.value.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ad.ShapeError(
            f"neg_ssim: image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    gx = to_gray(x)
    gy = to_gray(x0)
    win = ad.gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2

    def local(t):
        return ad.conv2d(t, win, padding="valid")

    mx = local(gx)
    my = local(gy)
    vx = local(gx * gx) - mx * mx
    vy = local(gy * gy) - my * my
    vxy = local(gx * gy) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * vxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return -ad.mean(num / den)


def _unit_normalize(f: ad.Tensor) -> ad.Tensor:
    """Unit-normalize feature vectors across the channel axis per position."""
    norm = ad.sqrt(
        ad.conv2d(f * f, np.ones((1, 1, f.value.shape[2], 1)), padding="valid") + _EPS
    )
    return f / norm


def feature_l2(x, x0, extractor: FeatureExtractor) -> ad.Tensor:
    """Stage-weighted mean squared distance of unit-normalized deep features."""
    x, x0 = _as3d(x), _as3d(x0)
    _check_same_shape(x, x0, "feature_l2")
    fx = extractor.forward(x)
    fy = extractor.forward(x0)
    total = None
    for wt, a, b in zip(extractor.stage_weights, fx, fy):
        d = _unit_normalize(a) - _unit_normalize(b)
        per_pos = ad.conv2d(d * d, np.ones((1, 1, d.value.shape[2], 1)), padding="valid")
        term = float(wt) * ad.mean(per_pos)
        total = term if total is None else total + term
    return total


def structure_texture(x, x0, extractor: FeatureExtractor) -> ad.Tensor:
    """Negated mean of global mean-similarity ("texture") and
    covariance-similarity ("structure") terms over the raw image and every
    extractor stage, uniformly weighted; equals -1 at x == x0."""
    x, x0 = _as3d(x), _as3d(x0)
    _check_same_shape(x, x0, "structure_texture")
    c1 = 1e-6
    c2 = 1e-6
    stages_x = [x] + extractor.forward(x)
    stages_y = [x0] + extractor.forward(x0)
    total_channels = sum(s.value.shape[2] for s in stages_x)
    acc = None
    for a, b in zip(stages_x, stages_y):
        mx = ad.channel_mean(a)
        my = ad.channel_mean(b)
        vx = ad.channel_mean(a * a) - mx * mx
        vy = ad.channel_mean(b * b) - my * my
        vxy = ad.channel_mean(a * b) - mx * my
        texture = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
        structure = (2.0 * vxy + c2) / (vx + vy + c2)
        term = ad.reduce_sum(texture + structure)
        acc = term if acc is None else acc + term
    return -(acc / (2.0 * total_channels))


@dataclass
class FidelityMeasure:
    """A distance D(x, x0) with its preferred steepest-ascent norm."""

    kind: str
    fn: Callable[[ad.Tensor, ad.Tensor], ad.Tensor]
    ascent_norm: str  # "linf" or "l2"
    baseline: float  # D(x, x) for this measure

    def graph(self, x, x0) -> ad.Tensor:
        return self.fn(x, x0)

    def evaluate(self, x: np.ndarray, x0: np.ndarray) -> float:
        return float(self.fn(ad.as_tensor(x), ad.as_tensor(x0)).value)


MEASURE_KINDS = ("chebyshev", "neg-ssim", "feature-l2", "structure-texture")


def get_measure(kind: str, extractor: FeatureExtractor | None = None) -> FidelityMeasure:
    if kind == "chebyshev":
        return FidelityMeasure("chebyshev", chebyshev, "linf", 0.0)
    if kind == "neg-ssim":
        return FidelityMeasure("neg-ssim", neg_ssim, "l2", -1.0)
    if kind in ("feature-l2", "structure-texture"):
        if extractor is None:
            raise ValueError(f"{kind} requires a feature extractor")
        if kind == "feature-l2":
            return FidelityMeasure(
                "feature-l2", lambda a, b: feature_l2(a, b, extractor), "l2", 0.0
            )
        return FidelityMeasure(
            "structure-texture",
            lambda a, b: structure_texture(a, b, extractor),
            "l2",
            -1.0,
        )
    raise ValueError(f"unknown fidelity measure {kind!r}")
