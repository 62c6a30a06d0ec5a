"""Simulated ideal expert: one optimal corrective action per slice per round.

Positive clicks target false-negative regions, negative clicks target
false-positive regions, and a slice whose ground truth is empty but whose
prediction is not gets erased outright (the cheapest action; clicking a
fully spurious mask away pixel by pixel would be absurd).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clicks import NEGATIVE, POSITIVE, SliceClickState
from .regions import (
    connected_components,
    distance_transform,
    error_regions,
    farthest_point,
    center_of_mass,
    largest_region,
)

KIND_POSITIVE = "positive_click"
KIND_NEGATIVE = "negative_click"
KIND_ERASE = "erase"
KIND_NONE = "none"


@dataclass
class ExpertConfig:
    d0: float = 60.0  # cold-start negative sampling distance, px
    action_priority: str = "largest_error_first"
    seed: int = 0

    def __post_init__(self):
        if self.d0 <= 0:
            raise ValueError("d0 must be > 0")


@dataclass(frozen=True)
class FeedbackAction:
    kind: str
    slice_index: int
    position: tuple[int, int] | None = None

    @property
    def polarity(self) -> str | None:
        if self.kind == KIND_POSITIVE:
            return POSITIVE
        if self.kind == KIND_NEGATIVE:
            return NEGATIVE
        return None


def _none(k: int) -> FeedbackAction:
    return FeedbackAction(kind=KIND_NONE, slice_index=k)


def _try_click(region, polarity: str, state: SliceClickState) -> FeedbackAction | None:
    if region is None or state.at_cap(polarity):
        return None
    prev = state.clicks(polarity)
    point = farthest_point(region, prev)
    if point is None or point in prev:
        return None
    kind = KIND_POSITIVE if polarity == POSITIVE else KIND_NEGATIVE
    return FeedbackAction(kind=kind, slice_index=state.slice_index, position=point)


def decide(gt_slice, pred_slice, state: SliceClickState,
           connectivity: int = 8) -> FeedbackAction:
    """One optimal action for a slice given ground truth and prediction.

    Priority: erase a fully spurious slice; otherwise click the larger of
    the biggest false-negative / false-positive regions (false negative
    wins ties), falling back to the other polarity when the chosen one is
    unclickable (all-border region, cap reached, or duplicate point).
    """
    gt = np.asarray(gt_slice).astype(bool)
    pred = np.asarray(pred_slice).astype(bool)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    k = state.slice_index

    if not gt.any():
        if pred.any():
            return FeedbackAction(kind=KIND_ERASE, slice_index=k)
        return _none(k)

    errs = error_regions(gt, pred, connectivity)
    fn = largest_region(errs.false_negative)
    fp = largest_region(errs.false_positive)
    if fn is None and fp is None:
        return _none(k)

    if fp is None or (fn is not None and fn.area >= fp.area):
        order = ((fn, POSITIVE), (fp, NEGATIVE))
    else:
        order = ((fp, NEGATIVE), (fn, POSITIVE))
    for region, polarity in order:
        action = _try_click(region, polarity, state)
        if action is not None:
            return action
    return _none(k)


def cold_start(gt_slice, k: int, cfg: ExpertConfig | None = None,
               connectivity: int = 8) -> FeedbackAction:
    """First-round click with no mask to correct: center of mass of the
    biggest lesion, or nothing when the slice has no lesion."""
    gt = np.asarray(gt_slice).astype(bool)
    if not gt.any():
        return _none(k)
    region = largest_region(connected_components(gt, connectivity))
    point = center_of_mass(region)
    return FeedbackAction(kind=KIND_POSITIVE, slice_index=k, position=point)


def sample_negative_near(gt_slice, cfg: ExpertConfig, rng=None) -> tuple[int, int]:
    """Seeded-uniform background pixel within d0 of the lesion.

    Training-style negative sampling only; the ideal expert never calls
    this.
    """
    gt = np.asarray(gt_slice).astype(bool)
    if not gt.any():
        raise ValueError("ground-truth slice has no lesion")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    dist = distance_transform(np.argwhere(gt), gt.shape)
    candidates = np.argwhere((dist > 0) & (dist <= cfg.d0))
    if len(candidates) == 0:
        raise ValueError(f"no background pixel within d0={cfg.d0}")
    pick = candidates[int(rng.integers(len(candidates)))]
    return int(pick[0]), int(pick[1])


def action_record(t: int, action: FeedbackAction) -> dict:
    """Session-log JSONL record for an expert action."""
    rec: dict = {"type": "action", "t": t, "k": action.slice_index}
    if action.kind == KIND_ERASE:
        rec["action"] = "erase"
    elif action.kind == KIND_POSITIVE:
        rec["action"] = "pos"
    elif action.kind == KIND_NEGATIVE:
        rec["action"] = "neg"
    else:
        raise ValueError("no-op actions are not logged")
    if action.position is not None:
        rec["i"], rec["j"] = int(action.position[0]), int(action.position[1])
    return rec


def action_from_record(rec: dict) -> FeedbackAction:
    kinds = {"pos": KIND_POSITIVE, "neg": KIND_NEGATIVE, "erase": KIND_ERASE}
    kind = kinds[rec["action"]]
    position = None
    if kind != KIND_ERASE:
        position = (int(rec["i"]), int(rec["j"]))
    return FeedbackAction(kind=kind, slice_index=int(rec["k"]), position=position)
