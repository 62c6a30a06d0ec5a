"""End-to-end orchestration of the three system topologies.

System 1 is a one-shot initial segmentation.  System 2 starts from
all-zero masks and is driven purely by expert clicks (cold-start centers
first).  System 3 starts from the initial segmenter's masks and loops
expert corrections through the refinement segmenter.

Batch runs, HTTP sessions, and log replay all mutate state through the
same ``Session`` primitives, so identical action sequences always
produce identical masks.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .clicks import (
    DEFAULT_CLIP_RADIUS,
    DEFAULT_MAX_PER_POLARITY,
    DEFAULT_SIGMA,
    Click,
    ClickCache,
    NEGATIVE,
    POSITIVE,
)
from .expert import (
    ExpertConfig,
    FeedbackAction,
    KIND_ERASE,
    KIND_NONE,
    action_from_record,
    action_record,
    cold_start,
    decide,
)
from .metrics import FeedbackLedger, feedback_score, scan_iou
from .segmenters import (
    BinarizeRule,
    ConservativeRefiner,
    OracleRefiner,
    PluginSegmenter,
    ThresholdInitialSegmenter,
    ZeroSegmenter,
    binarize,
)
from .volumes import (
    DEFAULT_INTENSITY_WINDOW,
    DEFAULT_WINDOW_RADIUS,
    MaskVolume,
    Volume,
    extract_window,
    load_manifest,
    read_mask,
    read_volume,
)

SYSTEM1 = 1
SYSTEM2 = 2
SYSTEM3 = 3


@dataclass
class ClickConfig:
    sigma: float = DEFAULT_SIGMA
    clip_radius: float = DEFAULT_CLIP_RADIUS
    max_per_polarity: int = DEFAULT_MAX_PER_POLARITY
    reset_probability: float = 0.0  # 0 for evaluation; 0.3 mimics training


@dataclass
class WindowConfig:
    radius: int = DEFAULT_WINDOW_RADIUS
    intensity_window: tuple[float, float] = DEFAULT_INTENSITY_WINDOW


@dataclass
class SystemSpec:
    topology: int
    iterations: int = 0
    initial: str = "threshold"
    refinement: str | None = None
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    clicks: ClickConfig = field(default_factory=ClickConfig)
    window: WindowConfig = field(default_factory=WindowConfig)

    def __post_init__(self):
        if self.topology not in (SYSTEM1, SYSTEM2, SYSTEM3):
            raise ValueError(f"unknown topology {self.topology}")
        if self.topology == SYSTEM1 and self.iterations != 0:
            raise ValueError("system 1 takes no feedback iterations")
        if self.topology in (SYSTEM2, SYSTEM3) and not self.refinement:
            raise ValueError("interactive systems need a refinement binding")
        if self.topology == SYSTEM2 and self.iterations < 1:
            raise ValueError("system 2 needs at least one iteration")


@dataclass
class SplitSpec:
    test_fraction: float = 0.2
    n_bins: int = 5  # quintiles of relative foreground area
    seed: int = 0


@dataclass
class SessionLog:
    scan_id: str
    topology: int
    events: list = field(default_factory=list)
    iterations: int = 0  # feedback rounds, excluding the initial state

    def write_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for event in self.events:
                f.write(json.dumps(event, sort_keys=True) + "\n")


def load_session_log(path) -> list[dict]:
    events = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events


def session_seed(global_seed: int, scan_id: str) -> list[int]:
    """Per-session RNG stream independent of scan execution order."""
    return [int(global_seed), zlib.crc32(scan_id.encode())]


def _slice_digest(plane: np.ndarray) -> str:
    return f"{zlib.crc32(np.ascontiguousarray(plane).tobytes()):08x}"


class Session:
    """Single-scan interactive segmentation state.

    Owns the prediction masks, click cache, ledger, and event log.  Batch
    runners, the HTTP service, and log replay all drive this one class.
    """

    def __init__(
        self,
        volume: Volume,
        gt: MaskVolume | None = None,
        topology: int = SYSTEM3,
        initial=None,
        refiner=None,
        clicks: ClickConfig | None = None,
        window: WindowConfig | None = None,
        expert: ExpertConfig | None = None,
        seed: int = 0,
    ):
        if gt is not None and gt.voxels.shape != volume.voxels.shape:
            raise ValueError("ground-truth dims do not match the volume")
        self.volume = volume
        self.gt = gt
        self.topology = topology
        self.initial = initial
        self.refiner = refiner
        self.clicks_cfg = clicks or ClickConfig()
        self.window_cfg = window or WindowConfig()
        self.expert_cfg = expert or ExpertConfig()
        self.masks = np.zeros(volume.voxels.shape, dtype=np.uint8)
        self.cache = ClickCache(
            n_slices=volume.n_slices,
            shape=volume.slice_shape,
            max_per_polarity=self.clicks_cfg.max_per_polarity,
            reset_probability=self.clicks_cfg.reset_probability,
            seed=session_seed(seed, volume.scan_id),
        )
        self.ledger = FeedbackLedger()
        self.iteration = 0
        self.events: list[dict] = []
        self._dirty: set[int] = set()
        self._binarize = BinarizeRule()
        self._event_sink = None  # optional callable(dict) for live persistence

    # -- core primitives -----------------------------------------------------

    def _emit(self, event: dict) -> None:
        self.events.append(event)
        if self._event_sink is not None:
            self._event_sink(event)

    def window(self, k: int):
        return extract_window(
            self.volume, k,
            radius=self.window_cfg.radius,
            window=self.window_cfg.intensity_window,
        )

    def run_initial(self) -> None:
        """Populate masks from the initial segmenter (topologies 1 and 3)."""
        if self.initial is None:
            raise ValueError("no initial segmenter bound")
        for k in range(self.volume.n_slices):
            prob = self.initial.predict(self.window(k))
            self.masks[k] = binarize(prob, self._binarize)

    def refine_slice(self, k: int) -> None:
        if self.refiner is None:
            raise ValueError("no refinement segmenter bound")
        pos, neg = self.cache.masks_for_slice(
            k, sigma=self.clicks_cfg.sigma, clip_radius=self.clicks_cfg.clip_radius
        )
        prob = self.refiner.refine(self.window(k), self.masks[k], pos, neg)
        self.masks[k] = binarize(prob, self._binarize)
        self._dirty.discard(k)

    def refine_pending(self) -> list[int]:
        """Refine every slice with un-refined clicks; returns the slice ids."""
        done = sorted(self._dirty)
        for k in done:
            self.refine_slice(k)
        return done

    def apply_action(self, action: FeedbackAction, t: int | None = None,
                     refine_now: bool = True):
        """Apply one expert action.  Returns (accepted, reason)."""
        t = self.iteration if t is None else t
        k = action.slice_index
        if action.kind == KIND_NONE:
            return False, "none"
        if action.kind == KIND_ERASE:
            self.masks[k] = 0
            self.ledger.n_erasures += 1
            self._emit(action_record(t, action))
            return True, None
        click = Click(slice_index=k, position=action.position,
                      polarity=action.polarity)
        accepted = self.cache.add_click(click)
        if not accepted:
            state = self.cache.slice_state(k)
            reason = "cap" if state.at_cap(click.polarity) else "duplicate"
            return False, reason
        if click.polarity == POSITIVE:
            self.ledger.n_positive += 1
        else:
            self.ledger.n_negative += 1
        self._emit(action_record(t, action))
        if refine_now:
            self.refine_slice(k)
        else:
            self._dirty.add(k)
        return True, None

    def snapshot(self, t: int) -> None:
        """Record the end-of-iteration state row."""
        iou = None
        if self.gt is not None:
            iou = scan_iou(self.gt, MaskVolume(self.volume.scan_id, self.masks))
        digests = [_slice_digest(self.masks[k]) for k in range(self.volume.n_slices)]
        self._emit({
            "type": "iter",
            "t": t,
            "iou": iou,
            "score": feedback_score(self.ledger),
            "digests": digests,
        })

    # -- simulated-expert rounds ----------------------------------------------

    def expert_round(self, t: int, cold: bool = False) -> int:
        """One action per slice from the ideal expert; returns action count."""
        if self.gt is None:
            raise ValueError("simulated expert needs ground truth")
        applied = 0
        for k in range(self.volume.n_slices):
            gt_slice = self.gt.voxels[k]
            if cold:
                action = cold_start(gt_slice, k, self.expert_cfg)
            else:
                action = decide(gt_slice, self.masks[k], self.cache.slice_state(k))
            if action.kind == KIND_NONE:
                continue
            accepted, _ = self.apply_action(action, t=t, refine_now=False)
            if accepted:
                applied += 1
        self.refine_pending()
        return applied

    def final_masks(self) -> MaskVolume:
        return MaskVolume(scan_id=self.volume.scan_id, voxels=self.masks.copy())

    def log(self) -> SessionLog:
        return SessionLog(
            scan_id=self.volume.scan_id,
            topology=self.topology,
            events=list(self.events),
            iterations=self.iteration,
        )


# ---------------------------------------------------------------------------
# System runners
# ---------------------------------------------------------------------------


def run_system1(volume: Volume, initial, gt: MaskVolume | None = None,
                window: WindowConfig | None = None, seed: int = 0):
    """Per-slice initial prediction; no feedback."""
    session = Session(volume, gt=gt, topology=SYSTEM1, initial=initial,
                      window=window, seed=seed)
    session.run_initial()
    session.snapshot(0)
    return session.final_masks(), session.log()


def run_system2(volume: Volume, gt: MaskVolume, refiner, iterations: int,
                expert: ExpertConfig | None = None,
                clicks: ClickConfig | None = None,
                window: WindowConfig | None = None, seed: int = 0):
    """Cold-start interactive loop from all-zero masks.

    Round 0 places cold-start clicks; later rounds use the full expert
    rule.  Iteration rows 0..iterations-1 record the state after each
    round.
    """
    if iterations < 1:
        raise ValueError("system 2 needs at least one iteration")
    session = Session(volume, gt=gt, topology=SYSTEM2, refiner=refiner,
                      clicks=clicks, window=window, expert=expert, seed=seed)
    for t in range(iterations):
        session.cache.maybe_reset()
        session.expert_round(t, cold=(t == 0))
        session.snapshot(t)
        session.iteration = t + 1
    return session.final_masks(), session.log()


def run_system3(volume: Volume, gt: MaskVolume, initial, refiner,
                iterations: int, expert: ExpertConfig | None = None,
                clicks: ClickConfig | None = None,
                window: WindowConfig | None = None, seed: int = 0):
    """Initial prediction followed by expert-driven refinement rounds.

    Row 0 records the initial state; rows 1..iterations record each
    feedback round.  With iterations=0 this is exactly system 1.
    """
    session = Session(volume, gt=gt, topology=SYSTEM3, initial=initial,
                      refiner=refiner, clicks=clicks, window=window,
                      expert=expert, seed=seed)
    session.run_initial()
    session.snapshot(0)
    for t in range(1, iterations + 1):
        session.cache.maybe_reset()
        session.expert_round(t)
        session.snapshot(t)
        session.iteration = t
    return session.final_masks(), session.log()


def replay_session(volume: Volume, events, topology: int, initial=None,
                   refiner=None, clicks: ClickConfig | None = None,
                   window: WindowConfig | None = None, seed: int = 0) -> MaskVolume:
    """Re-run a recorded action log through the session primitives."""
    session = Session(volume, topology=topology, initial=initial,
                      refiner=refiner, clicks=clicks, window=window, seed=seed)
    if topology in (SYSTEM1, SYSTEM3):
        session.run_initial()
    for event in events:
        if event.get("type") != "action":
            continue
        session.apply_action(action_from_record(event), t=int(event["t"]),
                             refine_now=True)
    return session.final_masks()


# ---------------------------------------------------------------------------
# Dataset split
# ---------------------------------------------------------------------------


def split_dataset(manifest, spec: SplitSpec | None = None):
    """Patient-grouped, area-stratified split into (train_ids, test_ids).

    Patients are binned by their max relative foreground area into
    ``n_bins`` quantile bins; a seeded greedy pass per bin assigns whole
    patients to the test side while it moves the bin's test scan count
    closer to the target fraction.
    """
    spec = spec or SplitSpec()
    if not manifest:
        raise ValueError("empty manifest")
    groups: dict[str, list] = {}
    for entry in manifest:
        groups.setdefault(entry.patient_id, []).append(entry)
    patient_ids = sorted(groups)
    if len(patient_ids) < spec.n_bins:
        raise ValueError(
            f"need at least {spec.n_bins} patient groups, have {len(patient_ids)}"
        )
    areas = np.array(
        [max(e.relative_foreground_area for e in groups[p]) for p in patient_ids]
    )
    qs = np.linspace(0, 1, spec.n_bins + 1)[1:-1]
    edges = np.quantile(areas, qs)
    bin_of = np.searchsorted(edges, areas, side="right")

    rng = np.random.default_rng(spec.seed)
    test_patients: set[str] = set()
    for b in range(spec.n_bins):
        members = [patient_ids[i] for i in range(len(patient_ids)) if bin_of[i] == b]
        if not members:
            continue
        order = rng.permutation(len(members))
        total = sum(len(groups[p]) for p in members)
        target = spec.test_fraction * total
        picked = 0
        for idx in order:
            p = members[int(idx)]
            size = len(groups[p])
            if abs(picked + size - target) < abs(picked - target):
                test_patients.add(p)
                picked += size
    train_ids, test_ids = [], []
    for p in patient_ids:
        dest = test_ids if p in test_patients else train_ids
        dest.extend(e.scan_id for e in groups[p])
    return sorted(train_ids), sorted(test_ids)


def save_split(train_ids, test_ids, path, seed: int | None = None) -> None:
    payload = {"train": sorted(train_ids), "test": sorted(test_ids)}
    if seed is not None:
        payload["seed"] = seed
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_split(path) -> tuple[list, list]:
    with open(path) as f:
        payload = json.load(f)
    return list(payload["train"]), list(payload["test"])


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def build_initial(name: str):
    if name == "threshold":
        return ThresholdInitialSegmenter()
    if name == "zero":
        return ZeroSegmenter()
    if name.startswith("plugin:"):
        return PluginSegmenter(name[len("plugin:"):])
    raise ValueError(f"unknown initial segmenter {name!r}")


def build_refiner(name: str, gt: MaskVolume | None = None, shared=None):
    """Refiner factory.  ``shared`` lets one plug-in process serve a whole
    experiment."""
    if name == "conservative":
        return ConservativeRefiner()
    if name == "oracle":
        if gt is None:
            raise ValueError("oracle refiner needs ground truth")
        return OracleRefiner(gt)
    if name.startswith("plugin:"):
        if shared is not None:
            return shared
        return PluginSegmenter(name[len("plugin:"):])
    raise ValueError(f"unknown refinement segmenter {name!r}")


def _load_scan(entry, root: Path):
    volume = read_volume(root / entry.volume_path, scan_id=entry.scan_id,
                         patient_id=entry.patient_id)
    gt = None
    if entry.mask_path:
        gt = read_mask(root / entry.mask_path, scan_id=entry.scan_id)
    return volume, gt


def run_experiment(config: dict, out_dir=None) -> Path:
    """Run one system over the test side of a split and write a report.

    Report layout: per_scan.csv, curves.csv, summary.json, and
    logs/<scan_id>.jsonl.  Deterministic for fixed seeds; failures are
    recorded per scan and mark the report partial.
    """
    manifest_path = Path(config["manifest"])
    root = manifest_path.parent
    manifest = load_manifest(manifest_path)
    by_id = {e.scan_id: e for e in manifest}

    if "split" in config and config["split"]:
        _, test_ids = load_split(config["split"])
    else:
        split_cfg = config.get("split_spec", {})
        _, test_ids = split_dataset(manifest, SplitSpec(**split_cfg))
    unknown = [s for s in test_ids if s not in by_id]
    if unknown:
        raise ValueError(f"split names scans missing from the manifest: {unknown}")

    spec = SystemSpec(
        topology=int(config["system"]),
        iterations=int(config.get("iterations", 0)),
        initial=config.get("initial", "threshold"),
        refinement=config.get("refinement"),
        expert=ExpertConfig(**config.get("expert", {})),
        clicks=ClickConfig(**config.get("clicks", {})),
        window=WindowConfig(**{
            k: tuple(v) if k == "intensity_window" else v
            for k, v in config.get("window", {}).items()
        }),
    )
    seed = int(config.get("seed", 0))
    out = Path(out_dir or config["out"])
    (out / "logs").mkdir(parents=True, exist_ok=True)

    shared_plugin = None
    if spec.refinement and spec.refinement.startswith("plugin:"):
        shared_plugin = PluginSegmenter(spec.refinement[len("plugin:"):])
    initial = build_initial(spec.initial) if spec.topology in (SYSTEM1, SYSTEM3) else None

    per_scan = []
    logs = []
    failures: dict[str, str] = {}
    total_ledger = FeedbackLedger()
    try:
        for scan_id in sorted(test_ids):
            entry = by_id[scan_id]
            try:
                volume, gt = _load_scan(entry, root)
                if gt is None and spec.topology != SYSTEM1:
                    raise ValueError("interactive runs need ground truth")
                if spec.topology == SYSTEM1:
                    pred, log = run_system1(volume, initial, gt=gt,
                                            window=spec.window, seed=seed)
                    ledger = FeedbackLedger()
                elif spec.topology == SYSTEM2:
                    refiner = build_refiner(spec.refinement, gt=gt, shared=shared_plugin)
                    pred, log = run_system2(volume, gt, refiner, spec.iterations,
                                            expert=spec.expert, clicks=spec.clicks,
                                            window=spec.window, seed=seed)
                    ledger = _ledger_from_log(log.events)
                else:
                    refiner = build_refiner(spec.refinement, gt=gt, shared=shared_plugin)
                    pred, log = run_system3(volume, gt, initial, refiner,
                                            iterations=spec.iterations,
                                            expert=spec.expert, clicks=spec.clicks,
                                            window=spec.window, seed=seed)
                    ledger = _ledger_from_log(log.events)
            except Exception as exc:
                failures[scan_id] = f"{type(exc).__name__}: {exc}"
                continue
            if gt is not None:
                per_scan.append((scan_id, scan_iou(gt, pred)))
            total_ledger = total_ledger.add(ledger)
            log.write_jsonl(out / "logs" / f"{scan_id}.jsonl")
            logs.append(log.events)
    finally:
        if shared_plugin is not None:
            shared_plugin.close()

    if per_scan:
        stats = metrics_mod.iou_stats(per_scan)
        metrics_mod.write_per_scan_csv(stats, out / "per_scan.csv")
        metrics_mod.write_summary_json(stats, total_ledger, out / "summary.json",
                                       failures=failures)
    if logs:
        curve = metrics_mod.iteration_curves(logs)
        metrics_mod.write_curves_csv(curve, out / "curves.csv")
    return out


def _ledger_from_log(events) -> FeedbackLedger:
    ledger = FeedbackLedger()
    for event in events:
        if event.get("type") != "action":
            continue
        if event["action"] == "pos":
            ledger.n_positive += 1
        elif event["action"] == "neg":
            ledger.n_negative += 1
        elif event["action"] == "erase":
            ledger.n_erasures += 1
    return ledger
