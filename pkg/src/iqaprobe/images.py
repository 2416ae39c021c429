"""Image loading, saving, and the 24-bit quantization contract.

Images are float64 H x W x C arrays in [0, 1] with C in {1, 3}. Candidate
outputs must hold exact multiples of 1/255, which `quantize` guarantees
(round-half-to-even, then clamp).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class ImageError(ValueError):
    """Unreadable or unsupported image input."""


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageError(f"expected H x W x {{1,3}} image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError(f"degenerate image shape {img.shape}")
    return img


def clamp01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the nearest multiple of 1/255 (ties to even) and clamp."""
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)[:, :, None]
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise ImageError(f"cannot read image {path}: {e}") from e
    return arr / 255.0


def save_png(img: np.ndarray, path) -> None:
    """Lossless PNG write of a [0,1] image; quantizes to 8 bits per channel."""
    img = validate_image(img)
    u8 = to_uint8(img)
    if u8.shape[2] == 1:
        pil = Image.fromarray(u8[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(u8, mode="RGB")
    pil.save(path, format="PNG")
