"""2D geometric kernels on binary slice masks.

Connected components (8-neighborhood by default), region borders
(4-neighborhood, image frame counts as outside), Euclidean distance
transforms, in-region centroids, and the max-min click selector that
places a point as far as possible from both the region border and any
previous clicks.

All distance comparisons that decide argmins/argmaxes run on exact
integer squared distances, so tie-breaking (smallest row, then smallest
column) is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)

# Keeps pairwise distance matrices under ~32 MB.
_CHUNK = 2048


@dataclass(eq=False)
class Region:
    """One connected set of foreground pixels."""

    label: int
    coords: np.ndarray         # (n, 2) int64, row-major sorted
    border_coords: np.ndarray  # (m, 2) int64, subset of coords
    bbox: tuple[int, int, int, int]  # (i_min, i_max, j_min, j_max), inclusive

    @property
    def area(self) -> int:
        return len(self.coords)

    @cached_property
    def pixels(self) -> frozenset:
        return frozenset(map(tuple, self.coords.tolist()))

    @cached_property
    def border(self) -> frozenset:
        return frozenset(map(tuple, self.border_coords.tolist()))

    def is_all_border(self) -> bool:
        return len(self.border_coords) == len(self.coords)


@dataclass
class ErrorRegions:
    false_negative: list  # ground truth 1, prediction 0
    false_positive: list  # ground truth 0, prediction 1


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return _STRUCT_8
    if connectivity == 4:
        return _STRUCT_4
    raise ValueError("connectivity must be 4 or 8")


def _border_mask(region_mask: np.ndarray) -> np.ndarray:
    # A pixel is border when any 4-neighbor is outside the region or the frame.
    p = np.pad(region_mask, 1)
    interior = (
        region_mask
        & p[:-2, 1:-1]
        & p[2:, 1:-1]
        & p[1:-1, :-2]
        & p[1:-1, 2:]
    )
    return region_mask & ~interior


def connected_components(mask, connectivity: int = 8) -> list[Region]:
    """Partition the foreground into Regions, labeled 1..n in row-major
    order of each region's first pixel."""
    mask = np.asarray(mask).astype(bool)
    labeled, n = ndimage.label(mask, structure=_structure(connectivity))
    if n == 0:
        return []
    flat = labeled.ravel()
    nz = np.flatnonzero(flat)
    first = np.full(n + 1, mask.size, dtype=np.int64)
    np.minimum.at(first, flat[nz], nz)
    order = np.argsort(first[1:], kind="stable") + 1

    objects = ndimage.find_objects(labeled)
    regions = []
    for new_label, old in enumerate(order, start=1):
        si, sj = objects[old - 1]
        sub = labeled[si, sj] == old
        coords = np.argwhere(sub).astype(np.int64)
        coords[:, 0] += si.start
        coords[:, 1] += sj.start
        border_local = np.argwhere(_border_mask(sub)).astype(np.int64)
        border_local[:, 0] += si.start
        border_local[:, 1] += sj.start
        bbox = (si.start, si.stop - 1, sj.start, sj.stop - 1)
        regions.append(
            Region(label=new_label, coords=coords, border_coords=border_local, bbox=bbox)
        )
    return regions


def distance_transform(points, domain: tuple[int, int]) -> np.ndarray:
    """Plane of Euclidean distances to the nearest of the given points."""
    pts = np.atleast_2d(np.asarray(list(points), dtype=np.int64))
    if pts.size == 0:
        raise ValueError("point set must be nonempty")
    h, w = domain
    grid = np.ones((h, w), dtype=bool)
    grid[pts[:, 0], pts[:, 1]] = False
    return ndimage.distance_transform_edt(grid)


def _min_sq_dist(coords: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Exact min squared distance from each coord to the target set."""
    out = np.empty(len(coords), dtype=np.int64)
    ti = targets[:, 0]
    tj = targets[:, 1]
    for start in range(0, len(coords), _CHUNK):
        chunk = coords[start:start + _CHUNK]
        di = chunk[:, 0:1] - ti[None, :]
        dj = chunk[:, 1:2] - tj[None, :]
        out[start:start + _CHUNK] = (di * di + dj * dj).min(axis=1)
    return out


def center_of_mass(region: Region) -> tuple[int, int]:
    """Region pixel nearest the coordinate mean; always inside the region."""
    if region.area == 0:
        raise ValueError("empty region")
    mean = region.coords.mean(axis=0)
    d2 = ((region.coords - mean) ** 2).sum(axis=1)
    # coords are row-major sorted, so the first argmin is the tie-winner
    return tuple(region.coords[int(np.argmin(d2))])


def farthest_point(region: Region, prev_clicks=()) -> tuple[int, int] | None:
    """Pixel maximizing the min distance to the region border and to any
    previous click.  None when the region is all border (single-pixel
    lines and the like have nowhere meaningful to click).
    """
    if region.is_all_border():
        return None
    score = _min_sq_dist(region.coords, region.border_coords)
    prev = np.atleast_2d(np.asarray(list(prev_clicks), dtype=np.int64))
    if prev.size:
        score = np.minimum(score, _min_sq_dist(region.coords, prev))
    return tuple(region.coords[int(np.argmax(score))])


def error_regions(gt, pred, connectivity: int = 8) -> ErrorRegions:
    """Connected regions of disagreement between a ground-truth plane and
    a prediction."""
    gt = np.asarray(gt).astype(bool)
    pred = np.asarray(pred).astype(bool)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    fn = connected_components(gt & ~pred, connectivity)
    fp = connected_components(~gt & pred, connectivity)
    return ErrorRegions(false_negative=fn, false_positive=fp)


def largest_region(regions) -> Region | None:
    """Max by area; ties go to the smallest label; None on empty input."""
    best = None
    for r in regions:
        if best is None or r.area > best.area or (r.area == best.area and r.label < best.label):
            best = r
    return best
