"""Run-length encoding of binary slice masks over row-major order.

Wire form: {"shape": [H, W], "runs": [start, length, start, length, ...]}
with starts strictly increasing and runs non-overlapping.  Lesions are
tiny relative to the slice, so this stays compact.
"""

from __future__ import annotations

import numpy as np


def rle_encode(mask) -> dict:
    mask = np.asarray(mask)
    h, w = mask.shape
    flat = mask.ravel().astype(bool)
    if not flat.any():
        return {"shape": [int(h), int(w)], "runs": []}
    padded = np.concatenate(([False], flat, [False]))
    changes = np.flatnonzero(padded[1:] != padded[:-1])
    starts = changes[0::2]
    ends = changes[1::2]
    runs = []
    for s, e in zip(starts, ends):
        runs.extend((int(s), int(e - s)))
    return {"shape": [int(h), int(w)], "runs": runs}


def rle_decode(obj: dict) -> np.ndarray:
    h, w = (int(d) for d in obj["shape"])
    runs = obj.get("runs", [])
    if len(runs) % 2 != 0:
        raise ValueError("runs must be (start, length) pairs")
    flat = np.zeros(h * w, dtype=np.uint8)
    prev_end = -1
    for idx in range(0, len(runs), 2):
        start, length = int(runs[idx]), int(runs[idx + 1])
        if length <= 0 or start <= prev_end:
            raise ValueError("runs must be strictly increasing and non-overlapping")
        end = start + length
        if end > flat.size:
            raise ValueError("run extends past the mask")
        flat[start:end] = 1
        prev_end = end - 1
    return flat.reshape(h, w)
