"""Initial and refinement segmenters, plus the external plug-in protocol.

Two deterministic reference implementations stand in for trained
networks: an intensity-threshold initial segmenter and a conservative
click-driven refiner.  A ground-truth oracle refiner exists for harness
verification only.  Learned models attach through a length-prefixed
stdin/stdout protocol documented at the bottom of this module.

Refiners receive clicks as encoded Gaussian planes and compute in
float32, so results are bit-identical whether a refiner runs in-process
or behind the float32 wire protocol.  Click seed pixels are recovered
from a plane as the pixels whose float32 value is >= 1 (a click's own
pixel always carries at least 1).
"""

from __future__ import annotations

import json
import math
import os
import selectors
import shlex
import struct
import subprocess
import sys
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .clicks import ClickMask
from .volumes import MaskVolume, SliceWindow

_STRUCT_8 = np.ones((3, 3), dtype=bool)


class SegmenterError(Exception):
    pass


@dataclass
class BinarizeRule:
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")


class InitialSegmenter(Protocol):
    def predict(self, window: SliceWindow) -> np.ndarray: ...


class RefinementSegmenter(Protocol):
    def refine(self, window: SliceWindow, prev_mask: np.ndarray,
               pos_mask: ClickMask, neg_mask: ClickMask) -> np.ndarray: ...


def binarize(prob, rule: BinarizeRule | None = None) -> np.ndarray:
    """Probability plane to {0,1}; a pixel turns on only strictly above
    the threshold."""
    if rule is None:
        rule = BinarizeRule()
    prob = np.asarray(prob)
    if prob.size and (prob.min() < 0.0 or prob.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return (prob > rule.threshold).astype(np.uint8)


def click_seeds(plane) -> np.ndarray:
    """(n, 2) coordinates of click seed pixels in an encoded click plane."""
    return np.argwhere(np.asarray(plane, dtype=np.float32) >= np.float32(1.0))


class ZeroSegmenter:
    """Predicts no foreground anywhere."""

    def predict(self, window: SliceWindow) -> np.ndarray:
        return np.zeros(window.shape, dtype=np.float32)


class ThresholdInitialSegmenter:
    """Reference initial segmenter: normalized-intensity threshold on the
    center channel followed by small-component removal."""

    def __init__(self, level: float = 0.6, min_area: int = 4):
        self.level = level
        self.min_area = min_area

    def predict(self, window: SliceWindow) -> np.ndarray:
        from .regions import connected_components

        raw = np.asarray(window.center_channel, dtype=np.float32)
        mask = raw > np.float32(self.level)
        if self.min_area > 1 and mask.any():
            keep = np.zeros_like(mask)
            for region in connected_components(mask):
                if region.area >= self.min_area:
                    keep[region.coords[:, 0], region.coords[:, 1]] = True
            mask = keep
        return mask.astype(np.float32)


def _disk_sq(shape, center) -> np.ndarray:
    h, w = shape
    ii = np.arange(h, dtype=np.int64) - center[0]
    jj = np.arange(w, dtype=np.int64) - center[1]
    return ii[:, None] ** 2 + jj[None, :] ** 2


def _component_containing(mask: np.ndarray, seed) -> np.ndarray:
    labeled, _ = ndimage.label(mask, structure=_STRUCT_8)
    lab = labeled[seed[0], seed[1]]
    return labeled == lab


class ConservativeRefiner:
    """Reference refiner: grows the mask around positive clicks by
    intensity similarity and removes components hit by negative clicks.

    A positive click adds the pixels connected to it whose center-channel
    intensity is within ``tau`` of the clicked pixel and which lie within
    ``growth_radius``.  A negative click on the mask removes its whole
    connected component; off the mask it removes only components fully
    contained in the ``removal_radius`` disk, so a nearby component that
    extends past the disk is never touched.
    """

    def __init__(self, growth_radius: float = 15.0, tau: float = 0.1,
                 removal_radius: float = 10.0):
        self.growth_radius = growth_radius
        self.tau = np.float32(tau)
        self.removal_radius = removal_radius

    def refine(self, window: SliceWindow, prev_mask, pos_mask: ClickMask,
               neg_mask: ClickMask) -> np.ndarray:
        intensity = np.asarray(window.center_channel, dtype=np.float32)
        prev = np.asarray(prev_mask, dtype=np.float32) > np.float32(0.5)
        out = prev.copy()

        grow_sq = self.growth_radius * self.growth_radius
        for seed in click_seeds(pos_mask.plane):
            level = intensity[seed[0], seed[1]]
            candidate = np.abs(intensity - level) <= self.tau
            candidate &= _disk_sq(intensity.shape, seed) <= grow_sq
            out |= _component_containing(candidate, seed)

        removal_sq = self.removal_radius * self.removal_radius
        for seed in click_seeds(neg_mask.plane):
            if prev[seed[0], seed[1]]:
                out &= ~_component_containing(prev, seed)
            else:
                d2 = _disk_sq(intensity.shape, seed)
                labeled, n = ndimage.label(prev, structure=_STRUCT_8)
                for lab in range(1, n + 1):
                    comp = labeled == lab
                    if (d2[comp] <= removal_sq).all():
                        out &= ~comp
        return out.astype(np.float32)


class OracleRefiner:
    """Harness-verification refiner with ground-truth access.

    A positive click fills the ground-truth pixels of its false-negative
    component (within ``budget_radius`` of the click); a negative click
    clears its false-positive component.  Correctly labeled pixels are
    never flipped, so per-slice overlap never decreases.
    """

    def __init__(self, gt: MaskVolume, budget_radius: float = math.inf):
        self.gt = gt
        self.budget_radius = budget_radius

    def refine(self, window: SliceWindow, prev_mask, pos_mask: ClickMask,
               neg_mask: ClickMask) -> np.ndarray:
        k = window.center_index
        if not 0 <= k < self.gt.n_slices:
            raise SegmenterError(f"no ground truth for slice {k}")
        gt = self.gt.voxels[k] > 0
        prev = np.asarray(prev_mask, dtype=np.float32) > np.float32(0.5)
        out = prev.copy()

        fn = gt & ~prev
        budget_sq = self.budget_radius * self.budget_radius
        for seed in click_seeds(pos_mask.plane):
            if not fn[seed[0], seed[1]]:
                continue
            comp = _component_containing(fn, seed)
            if math.isfinite(self.budget_radius):
                comp &= _disk_sq(gt.shape, seed) <= budget_sq
            out |= comp

        fp = prev & ~gt
        for seed in click_seeds(neg_mask.plane):
            if not fp[seed[0], seed[1]]:
                continue
            out &= ~_component_containing(fp, seed)
        return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Plug-in protocol
#
# A plug-in process prints one handshake line on startup:
#     {"protocol": 1, "roles": ["predict", "refine"]}
# then serves framed requests on stdin/stdout.  Each frame is
#     u32le header length | JSON header | raw payload
# Request headers: {"op": "predict"|"refine", "shape": [C, H, W],
# "dtype": "f32le"}; the payload is C*H*W little-endian float32 values.
# For refine the channels are ordered [window slices..., positive click
# mask, negative click mask, previous mask]; predict sends the window
# slices only.  Responses carry {"shape": [H, W], "dtype": "f32le"} plus
# an H*W float32 payload.
# ---------------------------------------------------------------------------


class PluginError(SegmenterError):
    pass


class PluginHandshakeError(PluginError):
    pass


class PluginFrameError(PluginError):
    pass


class PluginShapeError(PluginError):
    pass


class PluginTimeoutError(PluginError):
    pass


PROTOCOL_VERSION = 1


def _write_frame(stream, header: dict, payload: bytes = b"") -> None:
    blob = json.dumps(header, sort_keys=True).encode()
    stream.write(struct.pack("<I", len(blob)))
    stream.write(blob)
    stream.write(payload)
    stream.flush()


def _payload_length(header: dict) -> int:
    if header.get("dtype") != "f32le":
        return 0
    n = 1
    for d in header["shape"]:
        n *= int(d)
    return 4 * n


class PluginSegmenter:
    """Client for an external segmenter process speaking the frame protocol.

    Usable as both an initial and a refinement segmenter, subject to the
    roles announced in the process handshake.  Protocol failures raise
    PluginError subclasses; they are reported upward rather than killing
    the host.
    """

    def __init__(self, command: str | list, timeout: float = 30.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )
        self._selector = selectors.DefaultSelector()
        os.set_blocking(self._proc.stdout.fileno(), False)
        self._selector.register(self._proc.stdout, selectors.EVENT_READ)
        self._buffer = b""
        self.roles = self._handshake()

    # -- raw IO ------------------------------------------------------------

    def _read_bytes(self, n: int) -> bytes:
        import time

        deadline = time.monotonic() + self.timeout
        while len(self._buffer) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise PluginTimeoutError(f"timed out waiting for {n} bytes")
            if not self._selector.select(timeout=remaining):
                continue
            chunk = self._proc.stdout.read(n - len(self._buffer))
            if chunk is None:
                continue
            if chunk == b"":
                raise PluginFrameError("plug-in closed its output stream")
            self._buffer += chunk
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def _read_line(self) -> bytes:
        line = b""
        while True:
            byte = self._read_bytes(1)
            if byte == b"\n":
                return line
            line += byte

    def _handshake(self) -> list:
        try:
            line = self._read_line()
            hello = json.loads(line.decode())
        except (PluginError, ValueError) as exc:
            raise PluginHandshakeError(f"bad handshake: {exc}") from exc
        if hello.get("protocol") != PROTOCOL_VERSION:
            raise PluginHandshakeError(f"unsupported protocol: {hello!r}")
        roles = hello.get("roles", [])
        if not roles:
            raise PluginHandshakeError("plug-in announced no roles")
        return roles

    def _call(self, header: dict, payload: bytes, out_shape) -> np.ndarray:
        _write_frame(self._proc.stdin, header, payload)
        raw_len = self._read_bytes(4)
        (hlen,) = struct.unpack("<I", raw_len)
        if hlen == 0 or hlen > 1 << 20:
            raise PluginFrameError(f"corrupt response header length {hlen}")
        try:
            resp = json.loads(self._read_bytes(hlen).decode())
        except ValueError as exc:
            raise PluginFrameError(f"corrupt response header: {exc}") from exc
        if "error" in resp:
            raise PluginFrameError(f"plug-in error: {resp['error']}")
        body = self._read_bytes(_payload_length(resp))
        shape = tuple(int(d) for d in resp.get("shape", ()))
        if shape != tuple(out_shape):
            raise PluginShapeError(f"plug-in returned shape {shape}, expected {tuple(out_shape)}")
        plane = np.frombuffer(body, dtype="<f4").reshape(shape)
        if plane.size and (plane.min() < 0.0 or plane.max() > 1.0):
            raise PluginFrameError("plug-in returned probabilities outside [0, 1]")
        return plane.copy()

    # -- segmenter surface ---------------------------------------------------

    def predict(self, window: SliceWindow) -> np.ndarray:
        if "predict" not in self.roles:
            raise PluginError("plug-in does not serve predict")
        channels = np.ascontiguousarray(window.channels, dtype="<f4")
        header = {"op": "predict", "shape": list(channels.shape), "dtype": "f32le"}
        return self._call(header, channels.tobytes(), window.shape)

    def refine(self, window: SliceWindow, prev_mask, pos_mask: ClickMask,
               neg_mask: ClickMask) -> np.ndarray:
        if "refine" not in self.roles:
            raise PluginError("plug-in does not serve refine")
        stack = np.concatenate(
            [
                np.asarray(window.channels, dtype=np.float32),
                np.asarray(pos_mask.plane, dtype=np.float32)[None],
                np.asarray(neg_mask.plane, dtype=np.float32)[None],
                np.asarray(prev_mask, dtype=np.float32)[None],
            ],
            axis=0,
        )
        stack = np.ascontiguousarray(stack, dtype="<f4")
        header = {"op": "refine", "shape": list(stack.shape), "dtype": "f32le"}
        return self._call(header, stack.tobytes(), window.shape)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._selector.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_plugin(initial=None, refiner=None, stdin=None, stdout=None) -> None:
    """Worker side of the protocol: announce the handshake and serve frames
    until stdin closes."""
    from .clicks import DEFAULT_CLIP_RADIUS, DEFAULT_SIGMA

    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    roles = []
    if initial is not None:
        roles.append("predict")
    if refiner is not None:
        roles.append("refine")
    stdout.write((json.dumps({"protocol": PROTOCOL_VERSION, "roles": roles}) + "\n").encode())
    stdout.flush()

    while True:
        raw = stdin.read(4)
        if len(raw) < 4:
            return
        (hlen,) = struct.unpack("<I", raw)
        header = json.loads(stdin.read(hlen).decode())
        payload = stdin.read(_payload_length(header))
        stack = np.frombuffer(payload, dtype="<f4").reshape(header["shape"])
        try:
            if header["op"] == "predict":
                window = SliceWindow(
                    center_index=-1, radius=(stack.shape[0] - 1) // 2, channels=stack
                )
                plane = initial.predict(window)
            elif header["op"] == "refine":
                n_window = stack.shape[0] - 3
                window = SliceWindow(
                    center_index=-1, radius=(n_window - 1) // 2,
                    channels=stack[:n_window],
                )
                pos = ClickMask(plane=stack[-3], sigma=DEFAULT_SIGMA,
                                clip_radius=DEFAULT_CLIP_RADIUS)
                neg = ClickMask(plane=stack[-2], sigma=DEFAULT_SIGMA,
                                clip_radius=DEFAULT_CLIP_RADIUS)
                plane = refiner.refine(window, stack[-1], pos, neg)
            else:
                raise ValueError(f"unknown op {header['op']!r}")
        except Exception as exc:  # report, keep serving
            _write_frame(stdout, {"error": str(exc)})
            continue
        plane = np.ascontiguousarray(plane, dtype="<f4")
        _write_frame(stdout, {"shape": list(plane.shape), "dtype": "f32le"},
                     plane.tobytes())
