"""Named-tensor weight container.

Binary layout: magic "IQAW1", then per-tensor records of
  u32 name length, UTF-8 name, u32 rank, rank x u32 dims, row-major f32 data.
All integers and floats are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"IQAW1"


class WeightFormatError(ValueError):
    """Weight file is missing, truncated, or malformed."""


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_weights(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise WeightFormatError(f"weight file not found: {path}")
    blob = path.read_bytes()
    if blob[:5] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {blob[:5]!r}")
    pos = 5
    out: dict[str, np.ndarray] = {}
    name = "<header>"
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            end = pos + 4 * count
            if end > len(blob):
                raise WeightFormatError(f"{path}: tensor {name!r} is truncated")
            arr = np.frombuffer(blob[pos:end], dtype="<f4").reshape(dims)
            pos = end
            out[name] = arr.astype(np.float64)
    except (struct.error, UnicodeDecodeError) as e:
        raise WeightFormatError(f"{path}: garbled record near tensor {name!r}: {e}") from e
    return out


def require(tensors: dict[str, np.ndarray], name: str) -> np.ndarray:
    if name not in tensors:
        raise WeightFormatError(f"missing weight tensor {name!r}")
    return tensors[name]
