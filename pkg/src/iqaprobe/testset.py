"""Desk-scale synthetic stimuli: seeded pristine images, classic distortions,
and the proxy quality score used in place of subjective ratings.

Proxy MOS of a distorted image is 10 * SSIM(distorted, pristine), evaluated
with the plain (non-graph) SSIM below.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .images import quantize, save_png


def _gaussian1d(sigma: float) -> np.ndarray:
    radius = max(1, int(3 * sigma))
    r = np.arange(-radius, radius + 1)
    k = np.exp(-(r**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_sep(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable same-size filtering with edge replication, per channel."""
    pad = len(k) // 2
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        plane = np.pad(img[:, :, c], pad, mode="edge")
        plane = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, plane)
        plane = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 0, plane)
        out[:, :, c] = plane
    return out


def plain_ssim(x: np.ndarray, y: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Straight-line SSIM on the luminance plane. No graph machinery."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    lw = np.array([0.299, 0.587, 0.114])
    gx = x[:, :, 0] if x.shape[2] == 1 else np.tensordot(x, lw, axes=([2], [0]))
    gy = y[:, :, 0] if y.shape[2] == 1 else np.tensordot(y, lw, axes=([2], [0]))
    r = np.arange(window) - (window - 1) / 2.0
    g1 = np.exp(-(r**2) / (2 * sigma**2))
    win = np.outer(g1, g1)
    win /= win.sum()

    def local(plane):
        v = np.lib.stride_tricks.sliding_window_view(plane, (window, window))
        return np.einsum("ijkl,kl->ij", v, win)

    mx, my = local(gx), local(gy)
    vx = local(gx * gx) - mx * mx
    vy = local(gy * gy) - my * my
    vxy = local(gx * gy) - mx * my
    c1, c2 = 0.01**2, 0.03**2
    num = (2 * mx * my + c1) * (2 * vxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def make_pristine(size: int, rng: np.random.Generator) -> np.ndarray:
    """A smooth, structured synthetic scene: low-pass noise plus gradients
    and a few geometric edges, independently colored."""
    base = rng.uniform(0, 1, (size, size, 3))
    img = _filter_sep(base, _gaussian1d(size / 16.0))
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    ramp = np.stack([yy, xx, 0.5 * (xx + yy)], axis=2)
    img = 0.55 * _normalize(img) + 0.25 * ramp
    # a couple of hard-edged rectangles for structure
    for _ in range(3):
        r0, c0 = rng.integers(0, size - size // 4, 2)
        h, w = rng.integers(size // 8, size // 3, 2)
        color = rng.uniform(0.1, 0.9, 3)
        img[r0 : r0 + h, c0 : c0 + w, :] = 0.5 * img[r0 : r0 + h, c0 : c0 + w, :] + 0.5 * color
    return quantize(np.clip(img + 0.1, 0, 1))


def _normalize(img):
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo + 1e-12)


DISTORTIONS = ("blur", "noise", "posterize", "contrast")


def distort(img: np.ndarray, kind: str, level: float, rng: np.random.Generator) -> np.ndarray:
    """Apply one classic distortion at `level` in (0, 1], then re-quantize."""
    if kind == "blur":
        out = _filter_sep(img, _gaussian1d(0.5 + 2.5 * level))
    elif kind == "noise":
        out = img + rng.normal(0, 0.02 + 0.13 * level, img.shape)
    elif kind == "posterize":
        levels = max(2, int(24 - 20 * level))
        out = np.round(img * (levels - 1)) / (levels - 1)
    elif kind == "contrast":
        out = 0.5 + (img - 0.5) * (1.0 - 0.8 * level)
    else:
        raise ValueError(f"unknown distortion {kind!r}")
    return quantize(np.clip(out, 0, 1))


def make_testset(outdir, n_images: int = 12, size: int = 64, seed: int = 7) -> dict:
    """Write n distorted images, their pristine originals, and a proxy-MOS file.

    Returns the manifest dict that is also written to `proxy_mos.json`.
    """
    outdir = Path(outdir)
    (outdir / "pristine").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_images):
        pristine = make_pristine(size, rng)
        kind = DISTORTIONS[i % len(DISTORTIONS)]
        level = float(rng.uniform(0.15, 0.9))
        distorted = distort(pristine, kind, level, rng)
        mos = 10.0 * plain_ssim(distorted, pristine)
        name = f"img_{i:02d}"
        save_png(pristine, outdir / "pristine" / f"{name}.png")
        save_png(distorted, outdir / f"{name}.png")
        entries.append(
            {
                "id": name,
                "file": f"{name}.png",
                "pristine": f"pristine/{name}.png",
                "distortion": kind,
                "level": round(level, 6),
                "proxy_mos": round(mos, 6),
            }
        )
    manifest = {"seed": seed, "size": size, "images": entries}
    with open(outdir / "proxy_mos.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_proxy_mos(path) -> dict[str, float]:
    with open(path) as f:
        manifest = json.load(f)
    return {e["id"]: float(e["proxy_mos"]) for e in manifest["images"]}
