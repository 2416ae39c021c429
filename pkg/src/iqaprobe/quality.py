"""Differentiable no-reference quality model families and the logistic
calibration that maps raw scores onto the common [0, 10] scale.

Three desk-scale families ship:
  nss      - local contrast normalization statistics fed to an RBF regressor
  codebook - soft-assignment patch coding with global max pooling
  cnn      - small convolutional net with divisive normalization and
             two-level spatial pyramid pooling

Each scorer builds an autodiff graph so the attack can differentiate
through it. Weights are plain named tensors; calibration parameters are a
small text key-value file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .fidelity import to_gray
from .weights import load_weights, require

MODEL_KINDS = ("nss", "codebook", "cnn")

MSCN_WINDOW = 7
MSCN_SIGMA = 7.0 / 6.0
MSCN_C = 1.0 / 255.0


class QualityError(ValueError):
    """Invalid input to a quality model."""


# ---------------------------------------------------------------------------
# calibration (four-parameter logistic with the two plateaus pinned)


@dataclass
class CalibrationParams:
    beta3: float
    beta4: float
    beta1: float = 10.0
    beta2: float = 0.0

    def __post_init__(self):
        if self.beta4 == 0:
            raise QualityError("beta4 must be nonzero")
        if self.beta1 <= self.beta2:
            raise QualityError("beta1 must exceed beta2")

    def save(self, path, model_id: str = "") -> None:
        with open(path, "w") as f:
            if model_id:
                f.write(f"model = {model_id}\n")
            for k in ("beta1", "beta2", "beta3", "beta4"):
                f.write(f"{k} = {float(getattr(self, k))!r}\n")

    @classmethod
    def load(cls, path) -> "CalibrationParams":
        vals = {}
        for line in Path(path).read_text().splitlines():
            if "=" not in line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            if k.startswith("beta"):
                vals[k] = float(v)
        return cls(**vals)


def calibrate(raw, params: CalibrationParams):
    """q = (b1-b2) / (1 + exp(-(raw - b3)/|b4|)) + b2; strictly increasing.

    Accepts either a float (plain evaluation) or a Tensor (graph node).
    """
    b1, b2, b3, b4 = params.beta1, params.beta2, params.beta3, abs(params.beta4)
    if isinstance(raw, ad.Tensor):
        return (b1 - b2) / (1.0 + ad.exp(-(raw - b3) / b4)) + b2
    raw = float(raw)
    if not math.isfinite(raw):
        raise QualityError(f"non-finite raw score {raw}")
    return (b1 - b2) / (1.0 + math.exp(-(raw - b3) / b4)) + b2


def _calib_rmse(raws, targets, b3, b4):
    u = np.clip(-(raws - b3) / abs(b4), -700.0, 700.0)
    q = 10.0 / (1.0 + np.exp(u))
    return float(np.sqrt(np.mean((q - targets) ** 2)))


def _golden_min(fn, lo, hi, iters=80):
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def fit_calibration(raw_scores, targets) -> CalibrationParams:
    """Least-squares fit of beta3 and |beta4| with beta1=10, beta2=0 fixed.

    Coordinate descent: outer log-spaced grid over |beta4| with a
    golden-section line search over beta3 for each candidate, then a
    golden-section refinement of log|beta4| around the best grid cell.
    Deterministic given the inputs.
    """
    raws = np.asarray(raw_scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if raws.shape != targets.shape or raws.ndim != 1:
        raise QualityError("raw scores and targets must be 1-D and equal length")
    if raws.size < 4:
        raise QualityError("need at least 4 (raw, target) pairs")
    if np.any((targets < 0) | (targets > 10)):
        raise QualityError("targets must lie in [0, 10]")
    span = float(raws.max() - raws.min())
    if span == 0:
        raise QualityError("all raw scores equal: beta4 is unidentifiable")

    def best_b3(b4):
        # the beta3 range widens with |beta4| so near-flat fits can still
        # reach any constant level in (0, 10)
        b3_lo = float(raws.min()) - 3.0 * span - 8.0 * b4
        b3_hi = float(raws.max()) + 3.0 * span + 8.0 * b4
        b3 = _golden_min(lambda b3: _calib_rmse(raws, targets, b3, b4), b3_lo, b3_hi)
        return b3, _calib_rmse(raws, targets, b3, b4)

    log_grid = np.log10(span) + np.linspace(-3.0, 11.0, 113)
    results = [(best_b3(10.0**lg), lg) for lg in log_grid]
    (b3_star, rmse_star), lg_star = min(results, key=lambda t: t[0][1])

    step = float(log_grid[1] - log_grid[0])
    lg_opt = _golden_min(lambda lg: best_b3(10.0**lg)[1], lg_star - step, lg_star + step)
    b3_opt, rmse_opt = best_b3(10.0**lg_opt)
    if rmse_opt <= rmse_star:
        return CalibrationParams(beta3=b3_opt, beta4=10.0**lg_opt)
    return CalibrationParams(beta3=b3_star, beta4=10.0**lg_star)


# ---------------------------------------------------------------------------
# scorer: natural-scene-statistics features + RBF regressor


def _box(size):
    return np.ones((size, size, 1, 1))


def _moments(p: ad.Tensor) -> list[ad.Tensor]:
    """mean, variance, mean positive part, mean negative part."""
    m = ad.mean(p)
    var = ad.mean(p * p) - m * m
    pos = ad.mean(ad.relu(p))
    neg = ad.mean(ad.relu(-p))
    return [m, var, pos, neg]


def _mscn(g: ad.Tensor) -> ad.Tensor:
    win = ad.gaussian_kernel(MSCN_WINDOW, MSCN_SIGMA)
    # renormalize by the in-bounds window mass so borders stay unbiased
    # (a constant image must yield an identically zero field)
    ones = np.ones(g.value.shape)
    mass = ad.conv2d(ad.as_tensor(ones), win, padding="same").value
    mu = ad.conv2d(g, win, padding="same") / mass
    var = ad.conv2d(g * g, win, padding="same") / mass - mu * mu
    sigma = ad.sqrt(var + 1e-12)
    return (g - mu) / (sigma + MSCN_C)


def _downsample2(g: ad.Tensor) -> ad.Tensor:
    return ad.conv2d(g, np.full((2, 2, 1, 1), 0.25), stride=2)


def nss_features(x: ad.Tensor) -> ad.Tensor:
    """40 differentiable moment statistics of the MSCN field at two scales.

    Per scale: the field itself plus its horizontal / vertical / two diagonal
    neighbor products, four moments each.
    """
    g = to_gray(x)
    h, w = g.value.shape[:2]
    if h < 2 * MSCN_WINDOW or w < 2 * MSCN_WINDOW:
        raise QualityError(
            f"nss: image {h}x{w} smaller than twice the {MSCN_WINDOW}x{MSCN_WINDOW} window"
        )
    feats: list[ad.Tensor] = []
    for scale in range(2):
        if scale == 1:
            g = _downsample2(g)
        m = _mscn(g)
        hh, ww = m.value.shape[:2]
        pairs = [
            m * 1.0,
            ad.crop(m, (slice(None), slice(0, ww - 1))) * ad.crop(m, (slice(None), slice(1, ww))),
            ad.crop(m, (slice(0, hh - 1),)) * ad.crop(m, (slice(1, hh),)),
            ad.crop(m, (slice(0, hh - 1), slice(0, ww - 1)))
            * ad.crop(m, (slice(1, hh), slice(1, ww))),
            ad.crop(m, (slice(0, hh - 1), slice(1, ww)))
            * ad.crop(m, (slice(1, hh), slice(0, ww - 1))),
        ]
        for p in pairs:
            feats.extend(_moments(p))
    return ad.stack_scalars(feats)


def nss_score(x: ad.Tensor, tensors: dict[str, np.ndarray]) -> ad.Tensor:
    phi = nss_features(x)
    shift = require(tensors, "nss.shift")
    scale = require(tensors, "nss.scale")
    sv = require(tensors, "nss.sv")
    alpha = require(tensors, "nss.alpha")
    gamma = float(require(tensors, "nss.gamma")[0])
    bias = float(require(tensors, "nss.bias")[0])
    z = (phi - shift) / scale
    terms = []
    for j in range(sv.shape[0]):
        d = z - sv[j]
        terms.append(float(alpha[j]) * ad.exp(-gamma * ad.reduce_sum(d * d)))
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out + bias


# ---------------------------------------------------------------------------
# scorer: codebook soft assignment with max pooling


def codebook_responses(x: ad.Tensor, tensors: dict[str, np.ndarray]) -> ad.Tensor:
    """Normalized patch responses against every atom, H' x W' x P.

    Atoms are zero-mean unit-norm patches, so the correlation with the
    locally mean-subtracted, norm-divided patch is a plain convolution over
    a per-patch normalizer.
    """
    atoms = require(tensors, "codebook.atoms")  # p x p x 1 x P
    stride = int(require(tensors, "codebook.stride")[0])
    p = atoms.shape[0]
    g = to_gray(x)
    h, w = g.value.shape[:2]
    if h < p or w < p:
        raise QualityError(f"codebook: image {h}x{w} smaller than the {p}x{p} patch")
    n = float(p * p)
    num = ad.conv2d(g, atoms, stride=stride)
    s1 = ad.conv2d(g, _box(p), stride=stride)
    s2 = ad.conv2d(g * g, _box(p), stride=stride)
    ss = s2 - s1 * s1 / n
    denom = ad.sqrt(ss + 1e-12)
    return num / denom


def codebook_pooled(x: ad.Tensor, tensors: dict[str, np.ndarray]) -> ad.Tensor:
    r = codebook_responses(x, tensors)
    return ad.concat1d([ad.channel_max(ad.relu(r)), ad.channel_max(ad.relu(-r))])


def codebook_score(x: ad.Tensor, tensors: dict[str, np.ndarray]) -> ad.Tensor:
    pooled = codebook_pooled(x, tensors)
    w = require(tensors, "codebook.w")
    b = float(require(tensors, "codebook.b")[0])
    return ad.reduce_sum(pooled * w) + b


# ---------------------------------------------------------------------------
# scorer: small CNN with divisive normalization and pyramid pooling


def _divisive_norm(z: ad.Tensor, b: np.ndarray, w: np.ndarray) -> ad.Tensor:
    return z / ad.sqrt(b + w * (z * z))


def cnn_pooled(x: ad.Tensor, tensors: dict[str, np.ndarray]) -> ad.Tensor:
    if x.value.shape[2] != 3:
        raise QualityError(f"cnn: expected a 3-channel image, got {x.value.shape}")
    t = x
    i = 1
    while f"cnn.k{i}" in tensors:
        k = require(tensors, f"cnn.k{i}")
        bias = require(tensors, f"cnn.b{i}")
        z = ad.conv2d(t, k, stride=2, padding="same") + bias
        t = _divisive_norm(z, require(tensors, f"cnn.gdnb{i}"), require(tensors, f"cnn.gdnw{i}"))
        i += 1
    if i == 1:
        require(tensors, "cnn.k1")
    h, w = t.value.shape[:2]
    if h < 2 or w < 2:
        raise QualityError(f"cnn: feature map {h}x{w} too small for 2x2 pyramid pooling")
    hm, wm = h // 2, w // 2
    cells = [
        (slice(0, hm), slice(0, wm)),
        (slice(0, hm), slice(wm, w)),
        (slice(hm, h), slice(0, wm)),
        (slice(hm, h), slice(wm, w)),
    ]
    parts = [ad.channel_mean(t)]
    parts += [ad.channel_mean(ad.crop(t, c)) for c in cells]
    return ad.concat1d(parts)


def cnn_score(x: ad.Tensor, tensors: dict[str, np.ndarray]) -> ad.Tensor:
    pooled = cnn_pooled(x, tensors)
    w = require(tensors, "cnn.head_w")
    b = float(require(tensors, "cnn.head_b")[0])
    return ad.reduce_sum(pooled * w) + b


# ---------------------------------------------------------------------------

_SCORERS = {"nss": nss_score, "codebook": codebook_score, "cnn": cnn_score}


@dataclass
class QualityModel:
    """A raw scorer plus its fixed calibration, treated as one predictor."""

    kind: str
    weights: dict[str, np.ndarray]
    calibration: CalibrationParams
    model_id: str = ""

    def __post_init__(self):
        if self.kind not in _SCORERS:
            raise QualityError(f"unknown quality model kind {self.kind!r}")
        if not self.model_id:
            self.model_id = self.kind

    @property
    def input_channels(self) -> int:
        return 3 if self.kind == "cnn" else 1

    def raw_graph(self, x: ad.Tensor) -> ad.Tensor:
        return _SCORERS[self.kind](x, self.weights)

    def calibrated_graph(self, x: ad.Tensor) -> ad.Tensor:
        return calibrate(self.raw_graph(x), self.calibration)

    def raw_score(self, img: np.ndarray) -> float:
        return float(self.raw_graph(ad.as_tensor(img)).value)

    def score(self, img: np.ndarray) -> float:
        """Calibrated quality prediction in (0, 10)."""
        return calibrate(self.raw_score(img), self.calibration)

    @classmethod
    def load(cls, kind: str, weights_path, calib_path) -> "QualityModel":
        return cls(
            kind=kind,
            weights=load_weights(weights_path),
            calibration=CalibrationParams.load(calib_path),
        )
