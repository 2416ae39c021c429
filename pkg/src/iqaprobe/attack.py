"""Lagrangian perceptual attack: steepest ascent on
J = -D(x, x0) + lambda * (q(f_w(x)) - f0)^2, swept over a multiplier grid,
plus the lambda = infinity mode (pure score maximization, "enhancement").

Each candidate owns an independent RNG stream derived from (seed, index),
so a sweep is bit-reproducible regardless of execution order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .fidelity import FidelityMeasure
from .images import clamp01, load_image, quantize, save_png, validate_image
from .quality import QualityModel


def default_lambdas(k: int = 32, lo: float = 1e-3, hi: float = 1e3) -> list[float]:
    if k == 1:
        return [lo]
    return [float(v) for v in np.logspace(np.log10(lo), np.log10(hi), k)]


@dataclass
class AttackConfig:
    lambdas: list[float] = field(default_factory=default_lambdas)
    gamma: float = 1e-3
    max_iterations: int = 200
    ascent_norm: str = "linf"  # or "l2"
    seed: int = 0
    target_quality: float | None = None  # None: use the model's own q(f_w(x0))
    use_calibrated: bool = True

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if len(self.lambdas) < 1:
            raise ValueError("need at least one lambda")
        if any(l < 0 for l in self.lambdas):
            raise ValueError("lambdas must be non-negative")
        if self.ascent_norm not in ("linf", "l2"):
            raise ValueError(f"unknown ascent norm {self.ascent_norm!r}")

    def to_dict(self) -> dict:
        return {
            "lambdas": self.lambdas,
            "gamma": self.gamma,
            "max_iterations": self.max_iterations,
            "ascent_norm": self.ascent_norm,
            "seed": self.seed,
            "target_quality": self.target_quality,
            "use_calibrated": self.use_calibrated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        return cls(**d)


@dataclass
class Candidate:
    lam: float
    image: np.ndarray  # quantized, in [0,1], multiples of 1/255
    fidelity: float
    raw_quality: float
    quality: float  # calibrated
    quality_delta: float  # signed: q(y) - q(x0)
    objective_trace: list[float]
    seed_index: int
    failed: bool = False
    stall_reason: str = ""

    @property
    def abs_delta(self) -> float:
        return abs(self.quality_delta)


@dataclass
class CandidateSet:
    initial: np.ndarray
    config: AttackConfig
    candidates: list[Candidate]
    model_id: str = ""
    measure_id: str = ""
    image_id: str = ""
    initial_quality: float = 0.0
    target_quality: float = 0.0

    def save(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        save_png(self.initial, outdir / "initial.png")
        entries = []
        for i, c in enumerate(self.candidates):
            name = f"cand_{i:03d}.png"
            save_png(c.image, outdir / name)
            entries.append(
                {
                    "index": i,
                    "file": name,
                    "lambda": c.lam,
                    "fidelity": c.fidelity,
                    "raw_quality": c.raw_quality,
                    "quality": c.quality,
                    "quality_delta": c.quality_delta,
                    "seed_index": c.seed_index,
                    "failed": c.failed,
                    "stall_reason": c.stall_reason,
                    "objective_trace": c.objective_trace,
                }
            )
        manifest = {
            "config": self.config.to_dict(),
            "model": self.model_id,
            "measure": self.measure_id,
            "image": self.image_id,
            "initial_file": "initial.png",
            "initial_quality": self.initial_quality,
            "target_quality": self.target_quality,
            "candidates": entries,
        }
        with open(outdir / "manifest", "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, outdir) -> "CandidateSet":
        outdir = Path(outdir)
        with open(outdir / "manifest") as f:
            manifest = json.load(f)
        initial = load_image(outdir / manifest["initial_file"])
        cands = []
        for e in manifest["candidates"]:
            cands.append(
                Candidate(
                    lam=e["lambda"],
                    image=load_image(outdir / e["file"]),
                    fidelity=e["fidelity"],
                    raw_quality=e["raw_quality"],
                    quality=e["quality"],
                    quality_delta=e["quality_delta"],
                    objective_trace=e["objective_trace"],
                    seed_index=e["seed_index"],
                    failed=e["failed"],
                    stall_reason=e["stall_reason"],
                )
            )
        return cls(
            initial=initial,
            config=AttackConfig.from_dict(manifest["config"]),
            candidates=cands,
            model_id=manifest["model"],
            measure_id=manifest["measure"],
            image_id=manifest["image"],
            initial_quality=manifest["initial_quality"],
            target_quality=manifest["target_quality"],
        )


class AttackNumericalError(RuntimeError):
    """Non-finite objective or model output mid-run."""


def objective(
    x: ad.Tensor,
    x0: np.ndarray,
    f0: float,
    model: QualityModel,
    measure: FidelityMeasure,
    lam: float,
    use_calibrated: bool = True,
) -> ad.Tensor:
    """Differentiable attack objective; `x` is the graph leaf."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    d = measure.graph(x, ad.as_tensor(x0))
    if lam == 0.0:
        return -d
    pred = model.calibrated_graph(x) if use_calibrated else model.raw_graph(x)
    disc = pred - float(f0)
    return -d + lam * (disc * disc)


def steepest_direction(grad: np.ndarray, norm: str) -> np.ndarray:
    """Unit-norm ascent direction: sign map for linf, normalized gradient
    for l2; the zero gradient maps to the zero direction."""
    if norm == "linf":
        return np.sign(grad)
    if norm == "l2":
        n = float(np.sqrt((grad**2).sum()))
        if n == 0.0:
            return np.zeros_like(grad)
        return grad / n
    raise ValueError(f"unknown ascent norm {norm!r}")


def _predict(model: QualityModel, img: np.ndarray, use_calibrated: bool) -> tuple[float, float]:
    from .quality import calibrate

    raw = model.raw_score(img)
    cal = calibrate(raw, model.calibration)
    return raw, (cal if use_calibrated else raw)


def run_candidate(
    x0: np.ndarray,
    lam: float,
    config: AttackConfig,
    model: QualityModel,
    measure: FidelityMeasure,
    index: int = 0,
) -> Candidate:
    x0 = validate_image(x0)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, index)))
    eps = rng.integers(-1, 2, size=x0.shape).astype(np.float64) / 255.0
    x = clamp01(x0 + eps)

    f0 = config.target_quality
    if f0 is None:
        raw0, f0 = _predict(model, x0, config.use_calibrated)

    trace: list[float] = []
    failed = False
    stall = ""
    for _ in range(config.max_iterations):
        x_leaf = ad.leaf(x)
        j = objective(x_leaf, x0, f0, model, measure, lam, config.use_calibrated)
        jv = float(j.value)
        if not np.isfinite(jv):
            failed = True
            stall = "non-finite objective"
            break
        trace.append(jv)
        g = ad.backward(j, x_leaf)
        direction = steepest_direction(g, config.ascent_norm)
        if not direction.any():
            stall = "zero ascent direction"
            break
        x = clamp01(x + config.gamma * direction)

    y = quantize(x)
    raw_q, q = _predict(model, y, config.use_calibrated)
    _, q0 = _predict(model, x0, config.use_calibrated)
    return Candidate(
        lam=lam,
        image=y,
        fidelity=measure.evaluate(y, x0),
        raw_quality=raw_q,
        quality=q,
        quality_delta=q - q0,
        objective_trace=trace,
        seed_index=index,
        failed=failed,
        stall_reason=stall,
    )


def run_sweep(
    x0: np.ndarray,
    config: AttackConfig,
    model: QualityModel,
    measure: FidelityMeasure,
    image_id: str = "",
) -> CandidateSet:
    x0 = validate_image(x0)
    f0 = config.target_quality
    if f0 is None:
        _, f0 = _predict(model, x0, config.use_calibrated)
    cfg = AttackConfig(**{**config.to_dict(), "target_quality": f0})
    candidates = [
        run_candidate(x0, lam, cfg, model, measure, index=i)
        for i, lam in enumerate(cfg.lambdas)
    ]
    _, q0 = _predict(model, x0, config.use_calibrated)
    return CandidateSet(
        initial=x0,
        config=cfg,
        candidates=candidates,
        model_id=model.model_id,
        measure_id=measure.kind,
        image_id=image_id,
        initial_quality=q0,
        target_quality=f0,
    )


def enhance(
    x0: np.ndarray,
    steps: int,
    model: QualityModel,
    gamma: float = 1e-3,
    ascent_norm: str = "linf",
    seed: int = 0,
) -> np.ndarray:
    """lambda = infinity mode: ascend the calibrated score alone, with the
    same clamp/quantize machinery as the attack."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x0 = validate_image(x0)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    eps = rng.integers(-1, 2, size=x0.shape).astype(np.float64) / 255.0
    x = clamp01(x0 + eps)
    for _ in range(steps):
        x_leaf = ad.leaf(x)
        j = model.calibrated_graph(x_leaf)
        if not np.isfinite(float(j.value)):
            raise AttackNumericalError("non-finite model output during enhancement")
        g = ad.backward(j, x_leaf)
        direction = steepest_direction(g, ascent_norm)
        if not direction.any():
            break
        x = clamp01(x + gamma * direction)
    return quantize(x)
