"""HTTP session API for live interactive segmentation.

Endpoints:
    GET  /scans
    POST /sessions
    GET  /sessions/{id}/slices/{k}
    GET  /sessions/{id}/slices/{k}/mask
    POST /sessions/{id}/feedback
    POST /sessions/{id}/refine
    GET  /sessions/{id}/metrics

Masks travel as row-major run-length encodings; slice images as
base64-encoded 8-bit grayscale PNGs.  Session state lives in memory and
each mutation appends to a JSONL action log, so sessions are replayable.
All mutations of one session serialize behind a per-session lock.
"""

from __future__ import annotations

import base64
import io
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .clicks import NEGATIVE, POSITIVE
from .expert import FeedbackAction, KIND_ERASE, KIND_NEGATIVE, KIND_POSITIVE
from .metrics import feedback_score, scan_iou
from .rle import rle_encode
from .runner import (
    ClickConfig,
    SYSTEM1,
    SYSTEM2,
    SYSTEM3,
    Session,
    WindowConfig,
    build_initial,
    build_refiner,
)
from .volumes import MaskVolume, load_manifest, preprocess_slice, read_mask, read_volume


class ScanStore:
    """Lazy volume/mask loader over a manifest."""

    def __init__(self, manifest_path, log_dir=None):
        self.manifest_path = Path(manifest_path)
        self.root = self.manifest_path.parent
        self.entries = {e.scan_id: e for e in load_manifest(self.manifest_path)}
        self.log_dir = Path(log_dir) if log_dir else None
        self._volumes: dict = {}
        self._masks: dict = {}
        self._lock = threading.Lock()

    def volume(self, scan_id: str):
        with self._lock:
            if scan_id not in self._volumes:
                entry = self.entries[scan_id]
                self._volumes[scan_id] = read_volume(
                    self.root / entry.volume_path, scan_id=scan_id,
                    patient_id=entry.patient_id,
                )
            return self._volumes[scan_id]

    def mask(self, scan_id: str):
        with self._lock:
            if scan_id not in self._masks:
                entry = self.entries[scan_id]
                if not entry.mask_path:
                    self._masks[scan_id] = None
                else:
                    self._masks[scan_id] = read_mask(
                        self.root / entry.mask_path, scan_id=scan_id
                    )
            return self._masks[scan_id]


class CreateSessionRequest(BaseModel):
    scan_id: str
    topology: int = Field(default=SYSTEM3)
    initial: str = "threshold"
    refinement: str = "conservative"
    with_ground_truth: bool = True


class FeedbackRequest(BaseModel):
    k: int
    action: str  # "pos" | "neg" | "erase"
    i: int | None = None
    j: int | None = None
    refine: bool = True  # set False to batch clicks before one /refine call


class _LiveSession:
    def __init__(self, session: Session, log_path=None):
        self.session = session
        self.lock = threading.Lock()
        if log_path is not None:
            handle = open(log_path, "a")

            def sink(event):
                import json as _json

                handle.write(_json.dumps(event, sort_keys=True) + "\n")
                handle.flush()

            session._event_sink = sink


def _slice_png(plane01: np.ndarray) -> str:
    from PIL import Image

    img8 = np.clip(np.rint(plane01 * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img8, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def create_app(store: ScanStore) -> FastAPI:
    app = FastAPI(title="lesionloop session service")
    sessions: dict[str, _LiveSession] = {}

    def get_session(session_id: str) -> _LiveSession:
        live = sessions.get(session_id)
        if live is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return live

    def check_slice(session: Session, k: int) -> None:
        if not 0 <= k < session.volume.n_slices:
            raise HTTPException(status_code=400, detail="slice index out of range")

    @app.get("/scans")
    def scans():
        return [
            {
                "scan_id": e.scan_id,
                "patient_id": e.patient_id,
                "has_mask": bool(e.mask_path),
                "relative_foreground_area": e.relative_foreground_area,
            }
            for e in sorted(store.entries.values(), key=lambda e: e.scan_id)
        ]

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        if req.scan_id not in store.entries:
            raise HTTPException(status_code=404, detail="unknown scan")
        if req.topology not in (SYSTEM1, SYSTEM2, SYSTEM3):
            raise HTTPException(status_code=400, detail="unknown topology")
        volume = store.volume(req.scan_id)
        gt = store.mask(req.scan_id) if req.with_ground_truth else None
        try:
            initial = build_initial(req.initial) if req.topology != SYSTEM2 else None
            refiner = (
                build_refiner(req.refinement, gt=gt) if req.topology != SYSTEM1 else None
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        session = Session(
            volume, gt=gt, topology=req.topology, initial=initial, refiner=refiner,
            clicks=ClickConfig(), window=WindowConfig(),
        )
        if req.topology in (SYSTEM1, SYSTEM3):
            session.run_initial()
        session_id = uuid.uuid4().hex
        log_path = None
        if store.log_dir is not None:
            store.log_dir.mkdir(parents=True, exist_ok=True)
            log_path = store.log_dir / f"{session_id}.jsonl"
        sessions[session_id] = _LiveSession(session, log_path=log_path)
        h, w = volume.slice_shape
        return {
            "session_id": session_id,
            "scan_id": req.scan_id,
            "topology": req.topology,
            "n_slices": volume.n_slices,
            "shape": [h, w],
            "has_ground_truth": gt is not None,
        }

    @app.get("/sessions/{session_id}/slices/{k}")
    def get_slice(session_id: str, k: int):
        live = get_session(session_id)
        with live.lock:
            session = live.session
            check_slice(session, k)
            plane = preprocess_slice(
                session.volume.voxels[k],
                window=session.window_cfg.intensity_window,
            )
            state = session.cache.slice_state(k)
            clicks = [
                {"i": i, "j": j, "polarity": pol}
                for pol, pts in ((POSITIVE, state.positive), (NEGATIVE, state.negative))
                for (i, j) in pts
            ]
            return {
                "k": k,
                "image_png": _slice_png(plane),
                "mask": rle_encode(session.masks[k]),
                "clicks": clicks,
                "iteration": session.iteration,
            }

    @app.get("/sessions/{session_id}/slices/{k}/mask")
    def get_mask(session_id: str, k: int):
        live = get_session(session_id)
        with live.lock:
            check_slice(live.session, k)
            return rle_encode(live.session.masks[k])

    @app.post("/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, req: FeedbackRequest):
        live = get_session(session_id)
        with live.lock:
            session = live.session
            check_slice(session, req.k)
            if req.action == "erase":
                action = FeedbackAction(kind=KIND_ERASE, slice_index=req.k)
            elif req.action in ("pos", "neg"):
                if req.i is None or req.j is None:
                    raise HTTPException(status_code=400, detail="click needs i and j")
                h, w = session.volume.slice_shape
                if not (0 <= req.i < h and 0 <= req.j < w):
                    raise HTTPException(status_code=400, detail="click out of bounds")
                kind = KIND_POSITIVE if req.action == "pos" else KIND_NEGATIVE
                action = FeedbackAction(kind=kind, slice_index=req.k,
                                        position=(req.i, req.j))
            else:
                raise HTTPException(status_code=400, detail="unknown action")
            accepted, reason = session.apply_action(action, refine_now=req.refine)
            if accepted and req.refine:
                session.iteration += 1
            return {
                "accepted": accepted,
                "reason": reason,
                "mask": rle_encode(session.masks[req.k]),
                "score": feedback_score(session.ledger),
                "iteration": session.iteration,
            }

    @app.post("/sessions/{session_id}/refine")
    def refine(session_id: str):
        live = get_session(session_id)
        with live.lock:
            session = live.session
            refined = session.refine_pending()
            if refined:
                session.iteration += 1
            return {"refined_slices": refined, "iteration": session.iteration}

    @app.get("/sessions/{session_id}/metrics")
    def get_metrics(session_id: str):
        live = get_session(session_id)
        with live.lock:
            session = live.session
            ledger = session.ledger
            payload = {
                "session_id": session_id,
                "n_positive": ledger.n_positive,
                "n_negative": ledger.n_negative,
                "n_erasures": ledger.n_erasures,
                "score": feedback_score(ledger),
                "iteration": session.iteration,
            }
            if session.gt is not None:
                payload["iou"] = scan_iou(
                    session.gt,
                    MaskVolume(session.volume.scan_id, session.masks.copy()),
                )
            return payload

    return app


def serve(addr: str, manifest_path, log_dir=None) -> None:
    import uvicorn

    host, _, port = addr.rpartition(":")
    store = ScanStore(manifest_path, log_dir=log_dir)
    uvicorn.run(create_app(store), host=host or "127.0.0.1", port=int(port))
