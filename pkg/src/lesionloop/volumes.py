"""Volume and mask data model, LVOL binary IO, slice windows, and phantoms.

Volumes are CT-like intensity grids stored as signed 16-bit integers,
masks as {0,1} uint8.  In memory both use numpy arrays of shape
``(n_slices, height, width)`` so that ``voxels[k]`` is the 2D plane of
slice ``k``.  The public ``dims`` tuple follows the (height, width,
n_slices) convention used throughout the library.

The LVOL container is a tiny little-endian format:

    magic "LVOL" | version u16 | dtype u8 (1=i16 intensity, 2=u8 mask) |
    reserved u8 | height u32 | width u32 | n_slices u32 | dy,dx,dz f32 |
    payload (row index fastest, then column, then slice)

Synthetic "phantom" volumes with ellipsoidal lesions (and optional bright
non-lesion artifacts) stand in for real CT datasets at desk scale.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

LVOL_MAGIC = b"LVOL"
LVOL_VERSION = 1
DTYPE_INTENSITY = 1
DTYPE_MASK = 2

_HEADER = struct.Struct("<4sHBBIIIfff")

# Default intensity window mapping raw units onto [0, 1].
DEFAULT_INTENSITY_WINDOW = (-1000.0, 400.0)

DEFAULT_WINDOW_RADIUS = 2


class VolumeFormatError(Exception):
    """Base class for LVOL container errors."""


class BadMagicError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class PayloadSizeError(VolumeFormatError):
    """Header dims and payload size disagree (excess or invalid dims)."""


class UnsupportedDtypeError(VolumeFormatError):
    pass


class PhantomError(ValueError):
    """Invalid phantom parameters (e.g. lesion larger than the volume)."""


@dataclass
class Volume:
    """3D intensity grid with per-axis spacing in millimeters."""

    scan_id: str
    patient_id: str
    spacing: tuple[float, float, float]  # (dy, dx, dz)
    voxels: np.ndarray  # int16, shape (n_slices, height, width)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ValueError("voxels must be a 3D array")
        if min(self.voxels.shape) < 1:
            raise ValueError("all dims must be >= 1")
        if min(self.spacing) <= 0:
            raise ValueError("spacing components must be > 0")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(height, width, n_slices)."""
        n, h, w = self.voxels.shape
        return (h, w, n)

    @property
    def n_slices(self) -> int:
        return self.voxels.shape[0]

    @property
    def slice_shape(self) -> tuple[int, int]:
        return self.voxels.shape[1], self.voxels.shape[2]

    def slice_plane(self, k: int) -> np.ndarray:
        return self.voxels[k]


@dataclass
class MaskVolume:
    """Binary lesion mask paired with a Volume of the same dims."""

    scan_id: str
    voxels: np.ndarray  # uint8 {0,1}, shape (n_slices, height, width)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ValueError("voxels must be a 3D array")
        vals = np.unique(self.voxels)
        if not np.isin(vals, (0, 1)).all():
            raise ValueError("mask voxels must be 0 or 1")
        self.voxels = self.voxels.astype(np.uint8)

    @property
    def dims(self) -> tuple[int, int, int]:
        n, h, w = self.voxels.shape
        return (h, w, n)

    @property
    def n_slices(self) -> int:
        return self.voxels.shape[0]

    def foreground_fraction(self) -> float:
        return float(np.count_nonzero(self.voxels)) / self.voxels.size

    def slice_plane(self, k: int) -> np.ndarray:
        return self.voxels[k]


@dataclass
class SliceWindow:
    """Stack of 2·radius+1 normalized intensity planes centered on a slice."""

    center_index: int
    radius: int
    channels: np.ndarray  # (2*radius+1, height, width), values in [0, 1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[1], self.channels.shape[2]

    @property
    def center_channel(self) -> np.ndarray:
        return self.channels[self.channels.shape[0] // 2]


@dataclass
class ManifestEntry:
    scan_id: str
    patient_id: str
    volume_path: str
    mask_path: str | None
    relative_foreground_area: float

    def to_dict(self) -> dict:
        return {
            "scan_id": self.scan_id,
            "patient_id": self.patient_id,
            "volume_path": self.volume_path,
            "mask_path": self.mask_path,
            "relative_foreground_area": self.relative_foreground_area,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            scan_id=d["scan_id"],
            patient_id=d["patient_id"],
            volume_path=d["volume_path"],
            mask_path=d.get("mask_path"),
            relative_foreground_area=float(d["relative_foreground_area"]),
        )


def preprocess_slice(raw, window=DEFAULT_INTENSITY_WINDOW) -> np.ndarray:
    """Map raw intensities onto [0, 1] through a clamped linear window."""
    lo, hi = window
    raw = np.asarray(raw, dtype=np.float64)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def extract_window(
    volume: Volume,
    k: int,
    radius: int = DEFAULT_WINDOW_RADIUS,
    window=DEFAULT_INTENSITY_WINDOW,
) -> SliceWindow:
    """Stack the slices k-radius..k+radius, clamping indices at the edges."""
    n = volume.n_slices
    if not 0 <= k < n:
        raise IndexError(f"slice index {k} out of range [0, {n})")
    idx = np.clip(np.arange(k - radius, k + radius + 1), 0, n - 1)
    channels = preprocess_slice(volume.voxels[idx], window=window)
    return SliceWindow(center_index=k, radius=radius, channels=channels)


# ---------------------------------------------------------------------------
# LVOL container
# ---------------------------------------------------------------------------


def _write_lvol(path, voxels: np.ndarray, dtype_code: int, spacing) -> None:
    n, h, w = voxels.shape
    dy, dx, dz = spacing
    np_dtype = "<i2" if dtype_code == DTYPE_INTENSITY else "u1"
    # Payload order: row index fastest, then column, then slice.
    payload = np.ascontiguousarray(voxels.transpose(0, 2, 1)).astype(np_dtype).tobytes()
    header = _HEADER.pack(LVOL_MAGIC, LVOL_VERSION, dtype_code, 0, h, w, n, dy, dx, dz)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def _read_lvol(path, expected_dtype: int):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size or raw[:4] != LVOL_MAGIC:
        raise BadMagicError(f"{path}: not an LVOL file")
    magic, version, dtype_code, _, h, w, n, dy, dx, dz = _HEADER.unpack_from(raw)
    if version != LVOL_VERSION:
        raise UnsupportedDtypeError(f"{path}: unsupported version {version}")
    if dtype_code not in (DTYPE_INTENSITY, DTYPE_MASK):
        raise UnsupportedDtypeError(f"{path}: unknown dtype code {dtype_code}")
    if dtype_code != expected_dtype:
        raise UnsupportedDtypeError(
            f"{path}: dtype code {dtype_code}, expected {expected_dtype}"
        )
    if min(h, w, n) < 1:
        raise PayloadSizeError(f"{path}: invalid dims {(h, w, n)}")
    np_dtype = np.dtype("<i2") if dtype_code == DTYPE_INTENSITY else np.dtype("u1")
    expected = h * w * n * np_dtype.itemsize
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    if len(payload) > expected:
        raise PayloadSizeError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    flat = np.frombuffer(payload, dtype=np_dtype)
    voxels = flat.reshape(n, w, h).transpose(0, 2, 1)
    return voxels, (dy, dx, dz)


def write_volume(volume: Volume, path) -> None:
    _write_lvol(path, volume.voxels, DTYPE_INTENSITY, volume.spacing)


def read_volume(path, scan_id: str | None = None, patient_id: str = "") -> Volume:
    """Read an intensity volume; ids default from the filename."""
    voxels, spacing = _read_lvol(path, DTYPE_INTENSITY)
    if scan_id is None:
        scan_id = Path(path).stem
    return Volume(
        scan_id=scan_id,
        patient_id=patient_id,
        spacing=spacing,
        voxels=voxels.astype(np.int16),
    )


def write_mask(mask: MaskVolume, path, spacing=(1.0, 1.0, 1.0)) -> None:
    _write_lvol(path, mask.voxels, DTYPE_MASK, spacing)


def read_mask(path, scan_id: str | None = None) -> MaskVolume:
    voxels, _ = _read_lvol(path, DTYPE_MASK)
    if scan_id is None:
        scan_id = Path(path).stem
    return MaskVolume(scan_id=scan_id, voxels=voxels)


def save_manifest(entries, path) -> None:
    data = [e.to_dict() for e in entries]
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path) -> list[ManifestEntry]:
    with open(path) as f:
        data = json.load(f)
    return [ManifestEntry.from_dict(d) for d in data]


# ---------------------------------------------------------------------------
# Phantom generation
# ---------------------------------------------------------------------------


@dataclass
class PhantomSpec:
    """Parameters for a synthetic volume with ellipsoidal lesions.

    ``n_lesions`` / ``n_artifacts`` may be an int or an inclusive (lo, hi)
    range sampled per phantom.  Artifacts are bright blobs that are *not*
    part of the ground-truth mask; they give the initial segmenter
    something spurious to find.
    """

    dims: tuple[int, int, int] = (64, 64, 16)  # (height, width, n_slices)
    n_lesions: int | tuple[int, int] = (1, 3)
    lesion_radius: tuple[float, float] = (2.5, 6.0)  # in-plane, px
    lesion_z_radius: tuple[float, float] = (1.5, 3.0)
    n_artifacts: int | tuple[int, int] = 0
    artifact_radius: tuple[float, float] = (1.5, 3.0)
    background_level: float = -800.0
    background_noise: float = 30.0
    lesion_level: float = 100.0
    lesion_noise: float = 20.0
    artifact_level: float = 100.0
    spacing: tuple[float, float, float] = (0.7, 0.7, 1.25)
    min_separation: float = 2.0


@dataclass
class ScanStats:
    median_slices: float
    median_lesion_slices: float
    median_relative_area: float


def _sample_count(rng, value) -> int:
    if isinstance(value, tuple):
        lo, hi = value
        return int(rng.integers(lo, hi + 1))
    return int(value)


def _place_blobs(rng, dims, count, r_range, rz_range, placed, min_sep):
    """Sample non-overlapping ellipsoid (center, radii) triples."""
    h, w, n = dims
    blobs = []
    for _ in range(count):
        for _attempt in range(500):
            ri = rng.uniform(*r_range)
            rj = rng.uniform(*r_range)
            rk = rng.uniform(*rz_range)
            ci = rng.uniform(ri + 1, h - ri - 1)
            cj = rng.uniform(rj + 1, w - rj - 1)
            ck = rng.uniform(rk + 1, n - rk - 1)
            bound = max(ri, rj, rk)
            ok = True
            for (oc, ob) in placed:
                d = np.sqrt(
                    (ci - oc[0]) ** 2 + (cj - oc[1]) ** 2 + (ck - oc[2]) ** 2
                )
                if d < bound + ob + min_sep:
                    ok = False
                    break
            if ok:
                blob = ((ci, cj, ck), (ri, rj, rk))
                blobs.append(blob)
                placed.append(((ci, cj, ck), bound))
                break
        else:
            raise PhantomError("could not place a blob without overlap")
    return blobs


def _ellipsoid_mask(dims, center, radii) -> np.ndarray:
    h, w, n = dims
    ci, cj, ck = center
    ri, rj, rk = radii
    ii = np.arange(h, dtype=np.float64)
    jj = np.arange(w, dtype=np.float64)
    kk = np.arange(n, dtype=np.float64)
    # (n, h, w) broadcast matching the in-memory voxel layout
    di = ((ii - ci) / ri) ** 2
    dj = ((jj - cj) / rj) ** 2
    dk = ((kk - ck) / rk) ** 2
    return (dk[:, None, None] + di[None, :, None] + dj[None, None, :]) <= 1.0


def phantom_layout(seed: int, spec: PhantomSpec = PhantomSpec()):
    """The (center, radii) ellipsoids a seed produces: (lesions, artifacts).

    Shares the sampling path with generate_phantom, so tests can check
    mask voxels against the exact analytic ellipsoids.
    """
    h, w, n = spec.dims
    if min(h, w) < 16 or n < 16:
        raise PhantomError("phantom dims must be >= 16 per axis")
    max_r = max(spec.lesion_radius[1], spec.artifact_radius[1])
    max_rz = max(spec.lesion_z_radius[1], spec.artifact_radius[1])
    if 2 * max_r + 2 > min(h, w) or 2 * max_rz + 2 > n:
        raise PhantomError("lesion radius exceeds volume extent")

    rng = np.random.default_rng(seed)
    n_lesions = _sample_count(rng, spec.n_lesions)
    if n_lesions < 0:
        raise PhantomError("lesion count must be >= 0")
    n_artifacts = _sample_count(rng, spec.n_artifacts)

    placed: list = []
    lesions = _place_blobs(
        rng, spec.dims, n_lesions, spec.lesion_radius, spec.lesion_z_radius,
        placed, spec.min_separation,
    )
    artifacts = _place_blobs(
        rng, spec.dims, n_artifacts, spec.artifact_radius, spec.artifact_radius,
        placed, spec.min_separation,
    )
    return lesions, artifacts, rng


def generate_phantom(seed: int, spec: PhantomSpec = PhantomSpec()):
    """Deterministically build (Volume, MaskVolume, ManifestEntry) from a seed."""
    h, w, n = spec.dims
    lesions, artifacts, rng = phantom_layout(seed, spec)

    field_shape = (n, h, w)
    intensity = rng.normal(spec.background_level, spec.background_noise, field_shape)
    mask = np.zeros(field_shape, dtype=bool)
    for center, radii in lesions:
        m = _ellipsoid_mask(spec.dims, center, radii)
        mask |= m
    intensity[mask] = spec.lesion_level + rng.normal(
        0.0, spec.lesion_noise, int(mask.sum())
    )
    for center, radii in artifacts:
        m = _ellipsoid_mask(spec.dims, center, radii)
        m &= ~mask  # artifacts never overwrite lesion voxels
        intensity[m] = spec.artifact_level + rng.normal(
            0.0, spec.lesion_noise, int(m.sum())
        )

    vox = np.clip(np.rint(intensity), -2048, 2047).astype(np.int16)
    scan_id = f"scan{seed:06d}"
    volume = Volume(
        scan_id=scan_id,
        patient_id=f"pat{seed:06d}",
        spacing=spec.spacing,
        voxels=vox,
    )
    mask_volume = MaskVolume(scan_id=scan_id, voxels=mask.astype(np.uint8))
    entry = ManifestEntry(
        scan_id=scan_id,
        patient_id=volume.patient_id,
        volume_path="",
        mask_path="",
        relative_foreground_area=mask_volume.foreground_fraction(),
    )
    return volume, mask_volume, entry


def build_phantom_dataset(
    out_dir,
    count: int,
    seed: int,
    spec: PhantomSpec = PhantomSpec(),
) -> list[ManifestEntry]:
    """Write ``count`` phantoms plus manifest.json under ``out_dir``.

    Every fifth phantom shares a patient with its predecessor so splits
    have multi-scan patients to group.
    """
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        volume, mask, entry = generate_phantom(seed + i, spec)
        scan_id = f"phantom-{i:04d}"
        patient_id = f"patient-{(i * 4) // 5:04d}"
        volume = replace(volume, scan_id=scan_id, patient_id=patient_id)
        mask = replace(mask, scan_id=scan_id)
        vol_path = out / "volumes" / f"{scan_id}.lvol"
        mask_path = out / "masks" / f"{scan_id}.lvol"
        write_volume(volume, vol_path)
        write_mask(mask, mask_path, spacing=volume.spacing)
        entries.append(
            ManifestEntry(
                scan_id=scan_id,
                patient_id=patient_id,
                volume_path=str(vol_path.relative_to(out)),
                mask_path=str(mask_path.relative_to(out)),
                relative_foreground_area=entry.relative_foreground_area,
            )
        )
    save_manifest(entries, out / "manifest.json")
    return entries


def scan_stats(manifest, masks: dict) -> ScanStats:
    """Median slice count, lesion-slice count, and relative foreground area."""
    if not manifest:
        raise ValueError("empty manifest")
    n_slices = []
    n_lesion_slices = []
    areas = []
    for entry in manifest:
        mask = masks.get(entry.scan_id)
        if mask is None:
            raise ValueError(f"mask missing for scan {entry.scan_id}")
        n_slices.append(mask.n_slices)
        n_lesion_slices.append(int(np.count_nonzero(mask.voxels.any(axis=(1, 2)))))
        areas.append(mask.foreground_fraction())
    return ScanStats(
        median_slices=float(np.quantile(n_slices, 0.5)),
        median_lesion_slices=float(np.quantile(n_lesion_slices, 0.5)),
        median_relative_area=float(np.quantile(areas, 0.5)),
    )
