"""Click events, the per-slice click cache, and Gaussian click encoding.

A click at pixel c contributes exp(-d^2 / (2 sigma^2)) to every pixel at
Euclidean distance d < clip_radius of c and exactly 0 elsewhere.
Contributions from multiple clicks of one polarity are summed without any
upper clipping, so overlapping clicks can push values above 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POSITIVE = "pos"
NEGATIVE = "neg"

DEFAULT_SIGMA = 10.0
DEFAULT_CLIP_RADIUS = 30.0
DEFAULT_MAX_PER_POLARITY = 12


@dataclass(frozen=True)
class Click:
    slice_index: int
    position: tuple[int, int]
    polarity: str  # POSITIVE or NEGATIVE


@dataclass
class ClickMask:
    plane: np.ndarray  # float64, >= 0 everywhere
    sigma: float
    clip_radius: float


def encode_clicks(
    positions,
    shape: tuple[int, int],
    sigma: float = DEFAULT_SIGMA,
    clip_radius: float = DEFAULT_CLIP_RADIUS,
) -> ClickMask:
    """Sum one clipped Gaussian bump per click position."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if clip_radius <= 0:
        raise ValueError("clip_radius must be > 0")
    h, w = shape
    plane = np.zeros((h, w), dtype=np.float64)
    reach = int(np.ceil(clip_radius))
    clip_sq = clip_radius * clip_radius
    for (ci, cj) in positions:
        i0, i1 = max(0, ci - reach), min(h, ci + reach + 1)
        j0, j1 = max(0, cj - reach), min(w, cj + reach + 1)
        di = np.arange(i0, i1, dtype=np.float64) - ci
        dj = np.arange(j0, j1, dtype=np.float64) - cj
        d2 = di[:, None] ** 2 + dj[None, :] ** 2
        bump = np.exp(-d2 / (2.0 * sigma * sigma))
        bump[d2 >= clip_sq] = 0.0
        plane[i0:i1, j0:j1] += bump
    return ClickMask(plane=plane, sigma=sigma, clip_radius=clip_radius)


@dataclass
class SliceClickState:
    """Read-only view of one slice's cached clicks, for the expert."""

    slice_index: int
    positive: tuple
    negative: tuple
    positive_at_cap: bool
    negative_at_cap: bool

    def clicks(self, polarity: str) -> tuple:
        return self.positive if polarity == POSITIVE else self.negative

    def at_cap(self, polarity: str) -> bool:
        return self.positive_at_cap if polarity == POSITIVE else self.negative_at_cap


class ClickCache:
    """Per-slice positive/negative click lists with a hard per-polarity cap.

    Duplicates of an already-cached (position, polarity) pair on a slice
    are rejected rather than stacked.  ``maybe_reset`` clears the whole
    cache with the configured probability, drawn from a seeded stream.
    """

    def __init__(
        self,
        n_slices: int,
        shape: tuple[int, int],
        max_per_polarity: int = DEFAULT_MAX_PER_POLARITY,
        reset_probability: float = 0.0,
        seed: int = 0,
    ):
        if not 0.0 <= reset_probability <= 1.0:
            raise ValueError("reset_probability must be in [0, 1]")
        self.n_slices = n_slices
        self.shape = shape
        self.max_per_polarity = max_per_polarity
        self.reset_probability = reset_probability
        self._rng = np.random.default_rng(seed)
        self._slices: dict[int, dict[str, list]] = {}

    def _bucket(self, k: int) -> dict[str, list]:
        return self._slices.setdefault(k, {POSITIVE: [], NEGATIVE: []})

    def clicks(self, k: int, polarity: str) -> list:
        bucket = self._slices.get(k)
        if bucket is None:
            return []
        return list(bucket[polarity])

    def add_click(self, click: Click) -> bool:
        h, w = self.shape
        i, j = click.position
        if not (0 <= click.slice_index < self.n_slices):
            raise ValueError(f"slice index {click.slice_index} out of range")
        if not (0 <= i < h and 0 <= j < w):
            raise ValueError(f"click position {click.position} out of bounds")
        if click.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"unknown polarity {click.polarity!r}")
        bucket = self._bucket(click.slice_index)
        lst = bucket[click.polarity]
        if len(lst) >= self.max_per_polarity:
            return False
        if (i, j) in lst:
            return False
        lst.append((i, j))
        return True

    def maybe_reset(self) -> bool:
        if self._rng.random() < self.reset_probability:
            self.clear()
            return True
        return False

    def clear(self) -> None:
        self._slices.clear()

    def slice_state(self, k: int) -> SliceClickState:
        pos = tuple(self.clicks(k, POSITIVE))
        neg = tuple(self.clicks(k, NEGATIVE))
        return SliceClickState(
            slice_index=k,
            positive=pos,
            negative=neg,
            positive_at_cap=len(pos) >= self.max_per_polarity,
            negative_at_cap=len(neg) >= self.max_per_polarity,
        )

    def masks_for_slice(
        self,
        k: int,
        sigma: float = DEFAULT_SIGMA,
        clip_radius: float = DEFAULT_CLIP_RADIUS,
    ) -> tuple[ClickMask, ClickMask]:
        """Independent positive and negative encodings for one slice."""
        pos = encode_clicks(self.clicks(k, POSITIVE), self.shape, sigma, clip_radius)
        neg = encode_clicks(self.clicks(k, NEGATIVE), self.shape, sigma, clip_radius)
        return pos, neg


def click_record(t: int, click: Click) -> dict:
    """Session-log JSONL record for a click."""
    i, j = click.position
    return {"t": t, "k": click.slice_index, "i": int(i), "j": int(j),
            "polarity": click.polarity}


def click_from_record(rec: dict) -> Click:
    return Click(
        slice_index=int(rec["k"]),
        position=(int(rec["i"]), int(rec["j"])),
        polarity=rec["polarity"],
    )
