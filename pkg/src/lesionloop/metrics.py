"""IoU statistics and the weighted feedback score.

IoU is voxel-wise over a whole scan; a scan with no lesions and an empty
prediction scores exactly 1.  Quartiles use linear interpolation between
closest ranks.  The feedback score weighs expert actions as
positive 1.0, negative 0.85, erasure 0.75 and is minimized alongside
maximizing IoU.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HISTOGRAM_BINS = np.linspace(0.0, 1.0, 21)  # [0, 1] in 0.05 steps

DEFAULT_WEIGHTS = (1.0, 0.85, 0.75)  # positive, negative, erasure


@dataclass
class FeedbackLedger:
    n_positive: int = 0
    n_negative: int = 0
    n_erasures: int = 0
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS

    def add(self, other: "FeedbackLedger") -> "FeedbackLedger":
        return FeedbackLedger(
            n_positive=self.n_positive + other.n_positive,
            n_negative=self.n_negative + other.n_negative,
            n_erasures=self.n_erasures + other.n_erasures,
            weights=self.weights,
        )

    def to_dict(self) -> dict:
        return {
            "n_pos": self.n_positive,
            "n_neg": self.n_negative,
            "n_erase": self.n_erasures,
            "score": feedback_score(self),
        }


def feedback_score(ledger: FeedbackLedger) -> float:
    w_pos, w_neg, w_erase = ledger.weights
    return (
        ledger.n_positive * w_pos
        + ledger.n_negative * w_neg
        + ledger.n_erasures * w_erase
    )


@dataclass
class IoUStats:
    per_scan: list  # (scan_id, iou) pairs
    mean: float
    median: float
    q1: float
    q3: float
    histogram: list  # 20 counts over [0, 1] in 0.05 steps

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "histogram": list(self.histogram),
        }


def scan_iou(gt, pred) -> float:
    """Voxel IoU of two mask volumes of identical dims; 1.0 when both are
    empty."""
    gt_vox = gt.voxels if hasattr(gt, "voxels") else np.asarray(gt)
    pred_vox = pred.voxels if hasattr(pred, "voxels") else np.asarray(pred)
    if gt_vox.shape != pred_vox.shape:
        raise ValueError(f"dims mismatch: {gt_vox.shape} vs {pred_vox.shape}")
    a = gt_vox.astype(bool)
    b = pred_vox.astype(bool)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(a & b))
    return inter / union


def iou_stats(per_scan) -> IoUStats:
    pairs = list(per_scan)
    if not pairs:
        raise ValueError("empty IoU list")
    values = np.asarray([v for _, v in pairs], dtype=np.float64)
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75])
    hist, _ = np.histogram(values, bins=HISTOGRAM_BINS)
    return IoUStats(
        per_scan=pairs,
        mean=float(values.mean()),
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        histogram=[int(c) for c in hist],
    )


@dataclass
class CurvePoint:
    iteration: int
    mean_iou: float
    feedback_score: float  # cumulative across iterations, summed over scans


def iteration_curves(session_logs) -> list[CurvePoint]:
    """Aggregate per-iteration IoU / cumulative score rows from session
    logs (lists of event dicts).  All logs must cover the same contiguous
    iteration range starting at 0."""
    if not session_logs:
        raise ValueError("no session logs")
    per_log = []
    for events in session_logs:
        rows = [e for e in events if e.get("type") == "iter"]
        if not rows:
            raise ValueError("session log has no iteration records")
        ts = [int(r["t"]) for r in rows]
        if ts != list(range(len(ts))):
            raise ValueError("iteration indices must be contiguous from 0")
        per_log.append(rows)
    lengths = {len(rows) for rows in per_log}
    if len(lengths) != 1:
        raise ValueError("session logs cover different iteration counts")
    n = lengths.pop()
    curve = []
    for t in range(n):
        ious = [rows[t]["iou"] for rows in per_log if rows[t].get("iou") is not None]
        score = sum(float(rows[t]["score"]) for rows in per_log)
        mean_iou = float(np.mean(ious)) if ious else float("nan")
        curve.append(CurvePoint(iteration=t, mean_iou=mean_iou, feedback_score=score))
    return curve


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def write_per_scan_csv(stats: IoUStats, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["scan_id", "iou"])
        for scan_id, iou in sorted(stats.per_scan):
            writer.writerow([scan_id, f"{iou:.10g}"])


def write_curves_csv(curve: list[CurvePoint], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "mean_iou", "feedback_score"])
        for point in curve:
            writer.writerow(
                [point.iteration, f"{point.mean_iou:.10g}", f"{point.feedback_score:.10g}"]
            )


def write_summary_json(stats: IoUStats, ledger: FeedbackLedger, path,
                       failures: dict | None = None) -> None:
    summary = stats.to_dict()
    summary["n_scans"] = len(stats.per_scan)
    summary["feedback"] = ledger.to_dict()
    if failures:
        summary["partial"] = True
        summary["failures"] = dict(sorted(failures.items()))
    else:
        summary["partial"] = False
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def load_summary_json(path) -> dict:
    with open(path) as f:
        return json.load(f)
