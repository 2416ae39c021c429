"""Generation of the shipped default assets: feature-extractor weights, the
three quality models, and their calibration files.

Everything is a pure function of the seed. Backbone tensors are seeded
random draws; each model's final linear stage is then fit by ridge
regression against proxy quality targets on a small synthetic training set,
so the shipped predictors actually track quality on unattacked images.
The fit is deterministic (direct solve, no iterative stochastic training).
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .features import FeatureExtractor
from .quality import (
    CalibrationParams,
    QualityModel,
    cnn_pooled,
    codebook_pooled,
    fit_calibration,
    nss_features,
)
from .testset import DISTORTIONS, distort, make_pristine, plain_ssim
from .weights import load_weights, save_weights

DEFAULT_SEED = 20240001
TRAIN_SIZE = 64
N_PRISTINE = 12


def _training_corpus(seed: int):
    """Synthetic (image, proxy target) pairs: pristine plus distorted versions."""
    rng = np.random.default_rng(seed)
    images, targets = [], []
    for _ in range(N_PRISTINE):
        pristine = make_pristine(TRAIN_SIZE, rng)
        images.append(pristine)
        targets.append(10.0)
        for kind in DISTORTIONS:
            level = float(rng.uniform(0.2, 0.95))
            d = distort(pristine, kind, level, rng)
            images.append(d)
            targets.append(10.0 * plain_ssim(d, pristine))
    return images, np.array(targets)


def _ridge(features: np.ndarray, targets: np.ndarray, lam: float = 1e-3):
    """Ridge regression with an unpenalized intercept."""
    mu_f = features.mean(axis=0)
    mu_t = targets.mean()
    fc = features - mu_f
    a = fc.T @ fc + lam * np.eye(fc.shape[1])
    w = np.linalg.solve(a, fc.T @ (targets - mu_t))
    b = mu_t - mu_f @ w
    return w, float(b)


def build_nss_weights(images, targets, seed: int) -> dict[str, np.ndarray]:
    raw_feats = np.stack([nss_features(ad.as_tensor(img)).value for img in images])
    shift = raw_feats.mean(axis=0)
    scale = raw_feats.std(axis=0)
    scale[scale < 1e-8] = 1.0
    z = (raw_feats - shift) / scale

    rng = np.random.default_rng(seed)
    idx = rng.choice(len(images), size=16, replace=False)
    sv = z[np.sort(idx)]
    d2 = ((z[:, None, :] - sv[None, :, :]) ** 2).sum(axis=2)
    gamma = 1.0 / (2.0 * float(np.median(d2)) + 1e-12)
    k = np.exp(-gamma * d2)
    bias = float(targets.mean())
    alpha = np.linalg.solve(k.T @ k + 1e-4 * np.eye(len(sv)), k.T @ (targets - bias))
    return {
        "nss.shift": shift,
        "nss.scale": scale,
        "nss.sv": sv,
        "nss.alpha": alpha,
        "nss.gamma": np.array([gamma]),
        "nss.bias": np.array([bias]),
    }


def build_codebook_weights(
    images, targets, seed: int, n_atoms: int = 64, patch: int = 7, stride: int = 4
) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    lw = np.array([0.299, 0.587, 0.114])
    atoms = np.zeros((patch, patch, 1, n_atoms))
    for j in range(n_atoms):
        img = images[int(rng.integers(0, len(images)))]
        gray = np.tensordot(img, lw, axes=([2], [0]))
        r = int(rng.integers(0, gray.shape[0] - patch))
        c = int(rng.integers(0, gray.shape[1] - patch))
        p = gray[r : r + patch, c : c + patch].copy()
        p -= p.mean()
        norm = np.linalg.norm(p)
        if norm < 1e-6:  # flat patch: substitute a random zero-mean atom
            p = rng.normal(0, 1, (patch, patch))
            p -= p.mean()
            norm = np.linalg.norm(p)
        atoms[:, :, 0, j] = p / norm
    tensors = {
        "codebook.atoms": atoms,
        "codebook.stride": np.array([float(stride)]),
    }
    pooled = np.stack([codebook_pooled(ad.as_tensor(img), tensors).value for img in images])
    w, b = _ridge(pooled, targets, lam=1e-2)
    tensors["codebook.w"] = w
    tensors["codebook.b"] = np.array([b])
    return tensors


def build_cnn_weights(
    images, targets, seed: int, channels=(3, 8, 16, 24)
) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for i, (cin, cout) in enumerate(zip(channels[:-1], channels[1:]), start=1):
        tensors[f"cnn.k{i}"] = rng.normal(0, 1.0 / np.sqrt(9 * cin), (3, 3, cin, cout))
        tensors[f"cnn.b{i}"] = rng.normal(0, 0.05, cout)
        tensors[f"cnn.gdnb{i}"] = np.full(cout, 0.1)
        tensors[f"cnn.gdnw{i}"] = np.full(cout, 1.0)
    pooled = np.stack([cnn_pooled(ad.as_tensor(img), tensors).value for img in images])
    w, b = _ridge(pooled, targets, lam=1e-2)
    tensors["cnn.head_w"] = w
    tensors["cnn.head_b"] = np.array([b])
    return tensors


def _fit_model_calibration(model: QualityModel, images, targets) -> CalibrationParams:
    raws = np.array([model.raw_score(img) for img in images])
    return fit_calibration(raws, np.clip(targets, 0.0, 10.0))


def build_default_assets(outdir, seed: int = DEFAULT_SEED) -> dict[str, Path]:
    """Write all shipped weight and calibration files into `outdir`."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    images, targets = _training_corpus(seed)
    paths: dict[str, Path] = {}

    extractor = FeatureExtractor.default(seed=seed + 1)
    ext_path = outdir / "extractor.iqaw"
    save_weights(ext_path, extractor.to_weights())
    paths["extractor"] = ext_path

    builders = {
        "nss": build_nss_weights,
        "codebook": build_codebook_weights,
        "cnn": build_cnn_weights,
    }
    for offset, (kind, build) in enumerate(builders.items(), start=2):
        tensors = build(images, targets, seed + offset)
        wpath = outdir / f"{kind}.iqaw"
        save_weights(wpath, tensors)
        # reload so the shipped float32 rounding is what gets calibrated
        model = QualityModel(
            kind=kind,
            weights=load_weights(wpath),
            calibration=CalibrationParams(beta3=0.0, beta4=1.0),
        )
        calib = _fit_model_calibration(model, images, targets)
        cpath = outdir / f"{kind}.calib"
        calib.save(cpath, model_id=kind)
        paths[kind] = wpath
        paths[f"{kind}.calib"] = cpath
    return paths


def data_dir() -> Path:
    return Path(resources.files("iqaprobe") / "data")


def load_default_extractor() -> FeatureExtractor:
    return FeatureExtractor.from_weights(load_weights(data_dir() / "extractor.iqaw"))


def load_default_model(kind: str) -> QualityModel:
    d = data_dir()
    return QualityModel.load(kind, d / f"{kind}.iqaw", d / f"{kind}.calib")


def load_default_models() -> dict[str, QualityModel]:
    return {kind: load_default_model(kind) for kind in ("nss", "codebook", "cnn")}


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).parent / "data")
    written = build_default_assets(target)
    for name, p in sorted(written.items()):
        print(f"{name}: {p}")
