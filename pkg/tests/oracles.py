"""Independent brute-force oracles used by the test suite.

Deliberately naive implementations: flood fill with an explicit stack,
exhaustive pairwise distance minima, loop-based argmax with explicit
tie-breaking.  They share no code with the library paths they check.
"""

from __future__ import annotations

import math

import numpy as np


def flood_fill_components(mask, connectivity: int = 8) -> list[frozenset]:
    """Row-major-ordered list of pixel sets, one per connected component."""
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    if connectivity == 8:
        nbrs = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    seen = np.zeros_like(mask)
    comps = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j] or seen[i, j]:
                continue
            stack = [(i, j)]
            seen[i, j] = True
            pixels = []
            while stack:
                ci, cj = stack.pop()
                pixels.append((ci, cj))
                for di, dj in nbrs:
                    ni, nj = ci + di, cj + dj
                    if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not seen[ni, nj]:
                        seen[ni, nj] = True
                        stack.append((ni, nj))
            comps.append(frozenset(pixels))
    return comps


def border_pixels(pixels: frozenset, shape) -> frozenset:
    """Pixels with a 4-neighbor outside the set or outside the frame."""
    h, w = shape
    out = set()
    for (i, j) in pixels:
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ni, nj = i + di, j + dj
            if not (0 <= ni < h and 0 <= nj < w) or (ni, nj) not in pixels:
                out.add((i, j))
                break
    return frozenset(out)


def min_distance_plane(points, shape) -> np.ndarray:
    """Exhaustive min Euclidean distance from every pixel to the point set."""
    h, w = shape
    out = np.empty((h, w), dtype=np.float64)
    pts = list(points)
    for i in range(h):
        for j in range(w):
            best = None
            for (pi, pj) in pts:
                d2 = (i - pi) ** 2 + (j - pj) ** 2
                if best is None or d2 < best:
                    best = d2
            out[i, j] = math.sqrt(best)
    return out


def exhaustive_farthest_point(pixels, border, prev_clicks):
    """Argmax over region pixels of min(dist to border, dist to prev
    clicks); ties to smallest i then j; None when everything is border."""
    if set(pixels) == set(border):
        return None
    best_point = None
    best_score = None
    for p in sorted(pixels):
        s = min((p[0] - b[0]) ** 2 + (p[1] - b[1]) ** 2 for b in border)
        for c in prev_clicks:
            s = min(s, (p[0] - c[0]) ** 2 + (p[1] - c[1]) ** 2)
        if best_score is None or s > best_score:
            best_score = s
            best_point = p
    return best_point


def exhaustive_center_of_mass(pixels):
    pts = sorted(pixels)
    mi = sum(p[0] for p in pts) / len(pts)
    mj = sum(p[1] for p in pts) / len(pts)
    best_point = None
    best = None
    for p in pts:
        d2 = (p[0] - mi) ** 2 + (p[1] - mj) ** 2
        if best is None or d2 < best:
            best = d2
            best_point = p
    return best_point


def ellipsoid_lattice_count(dims, center, radii) -> int:
    """Loop count of lattice points inside the ellipsoid."""
    h, w, n = dims
    ci, cj, ck = center
    ri, rj, rk = radii
    count = 0
    for k in range(n):
        for i in range(h):
            for j in range(w):
                v = ((i - ci) / ri) ** 2 + ((j - cj) / rj) ** 2 + ((k - ck) / rk) ** 2
                if v <= 1.0:
                    count += 1
    return count


def counting_iou(gt, pred) -> float:
    gt = np.asarray(gt).astype(bool).ravel()
    pred = np.asarray(pred).astype(bool).ravel()
    inter = 0
    union = 0
    for a, b in zip(gt.tolist(), pred.tolist()):
        if a and b:
            inter += 1
        if a or b:
            union += 1
    return 1.0 if union == 0 else inter / union


def random_blob_mask(rng, shape, n_seeds=3, steps=60) -> np.ndarray:
    """Random-walk blob foreground; produces irregular multi-region masks."""
    h, w = shape
    mask = np.zeros(shape, dtype=np.uint8)
    for _ in range(n_seeds):
        i = int(rng.integers(h))
        j = int(rng.integers(w))
        for _ in range(steps):
            mask[i, j] = 1
            i = min(h - 1, max(0, i + int(rng.integers(-1, 2))))
            j = min(w - 1, max(0, j + int(rng.integers(-1, 2))))
    return mask
