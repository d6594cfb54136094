"""Small shared helpers."""
from __future__ import annotations

import hashlib

import numpy as np


def content_hash(*parts) -> str:
    """Stable hex digest of a mix of arrays, scalars and strings.

    Arrays are hashed via their float64/int64 byte representation, so the
    digest is reproducible across runs on the same platform.
    """
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            arr = np.ascontiguousarray(part)
            if arr.dtype.kind == "f":
                arr = arr.astype(np.float64)
            elif arr.dtype.kind in "iu":
                arr = arr.astype(np.int64)
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        elif isinstance(part, float):
            h.update(np.float64(part).tobytes())
        elif isinstance(part, (int, np.integer)):
            h.update(np.int64(part).tobytes())
        else:
            h.update(str(part).encode())
    return h.hexdigest()[:16]


def bbox_diagonal(points: np.ndarray) -> float:
    """Length of the axis-aligned bounding-box diagonal of a point set."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    return float(np.linalg.norm(hi - lo))
