import numpy as np
import pytest

from lesionloop.regions import (
    Region,
    center_of_mass,
    connected_components,
    distance_transform,
    error_regions,
    farthest_point,
    largest_region,
)

from oracles import (
    border_pixels,
    exhaustive_center_of_mass,
    exhaustive_farthest_point,
    flood_fill_components,
    min_distance_plane,
    random_blob_mask,
)


def region_from_pixels(pixels, shape=(64, 64)) -> Region:
    mask = np.zeros(shape, dtype=np.uint8)
    for (i, j) in pixels:
        mask[i, j] = 1
    regions = connected_components(mask)
    assert len(regions) == 1
    return regions[0]


class TestConnectedComponents:
    def test_empty(self):
        assert connected_components(np.zeros((8, 8))) == []

    def test_diagonal_pixels_are_one_region_under_8(self):
        mask = np.zeros((4, 4))
        mask[1, 1] = mask[2, 2] = 1
        assert len(connected_components(mask)) == 1
        assert len(connected_components(mask, connectivity=4)) == 2

    def test_labels_follow_row_major_first_pixel(self):
        mask = np.zeros((6, 6))
        mask[4, 0] = 1  # later in row-major order
        mask[0, 5] = 1
        regions = connected_components(mask)
        assert [r.label for r in regions] == [1, 2]
        assert (0, 5) in regions[0].pixels
        assert (4, 0) in regions[1].pixels

    def test_matches_flood_fill_on_random_masks(self, rng):
        for _ in range(200):
            mask = random_blob_mask(rng, (32, 32))
            ours = {r.pixels for r in connected_components(mask)}
            oracle = set(flood_fill_components(mask))
            assert ours == oracle

    def test_partition_properties(self, rng):
        mask = random_blob_mask(rng, (32, 32), n_seeds=5)
        regions = connected_components(mask)
        union = set()
        for r in regions:
            assert not (union & r.pixels)  # pairwise disjoint
            union |= r.pixels
        assert union == set(map(tuple, np.argwhere(mask).tolist()))

    def test_row_permutation_preserves_partitions(self, rng):
        mask = random_blob_mask(rng, (16, 16))
        perm = rng.permutation(16)
        permuted = mask[perm]
        ours = {r.pixels for r in connected_components(permuted)}
        oracle = set(flood_fill_components(permuted))
        assert ours == oracle

    def test_border_matches_oracle(self, rng):
        for _ in range(20):
            mask = random_blob_mask(rng, (24, 24))
            for r in connected_components(mask):
                assert r.border == border_pixels(r.pixels, (24, 24))
                assert r.border <= r.pixels

    def test_area_and_bbox(self):
        mask = np.zeros((8, 8))
        mask[2:5, 3:6] = 1
        (r,) = connected_components(mask)
        assert r.area == 9
        assert r.bbox == (2, 4, 3, 5)


class TestDistanceTransform:
    def test_zero_at_point(self):
        d = distance_transform([(3, 3)], (8, 8))
        assert d[3, 3] == 0.0

    def test_three_four_five(self):
        d = distance_transform([(0, 0)], (8, 8))
        assert d[3, 4] == pytest.approx(5.0, abs=1e-12)

    def test_matches_exhaustive_minimum(self, rng):
        for _ in range(100):
            h = int(rng.integers(4, 49))
            w = int(rng.integers(4, 49))
            n_pts = int(rng.integers(1, 8))
            pts = {(int(rng.integers(h)), int(rng.integers(w))) for _ in range(n_pts)}
            ours = distance_transform(pts, (h, w))
            oracle = min_distance_plane(pts, (h, w))
            assert np.allclose(ours, oracle, atol=1e-9)

    def test_lipschitz_between_neighbors(self, rng):
        d = distance_transform([(5, 9), (20, 3)], (32, 32))
        assert np.all(np.abs(np.diff(d, axis=0)) <= 1.0 + 1e-9)
        assert np.all(np.abs(np.diff(d, axis=1)) <= 1.0 + 1e-9)
        diag = np.abs(d[1:, 1:] - d[:-1, :-1])
        assert np.all(diag <= np.sqrt(2.0) + 1e-9)

    def test_empty_points(self):
        with pytest.raises(ValueError):
            distance_transform([], (8, 8))


class TestCenterOfMass:
    def test_full_square(self):
        r = region_from_pixels([(i, j) for i in range(2, 5) for j in range(2, 5)])
        assert center_of_mass(r) == (3, 3)

    def test_singleton(self):
        r = region_from_pixels([(5, 6)])
        assert center_of_mass(r) == (5, 6)

    def test_c_shape_mean_outside_region(self, rng):
        # C-shaped region: mean sits in the cavity, result must be in-region
        pixels = [(i, 2) for i in range(2, 9)]
        pixels += [(2, j) for j in range(3, 7)]
        pixels += [(8, j) for j in range(3, 7)]
        r = region_from_pixels(pixels)
        got = center_of_mass(r)
        assert got in r.pixels
        assert got == exhaustive_center_of_mass(r.pixels)

    def test_matches_oracle_on_random_regions(self, rng):
        for _ in range(50):
            mask = random_blob_mask(rng, (20, 20), n_seeds=1)
            for r in connected_components(mask):
                assert center_of_mass(r) == exhaustive_center_of_mass(r.pixels)


class TestFarthestPoint:
    def test_solid_square_center(self):
        r = region_from_pixels([(i, j) for i in range(5) for j in range(5)], (8, 8))
        assert farthest_point(r) == (2, 2)

    def test_single_pixel_line_returns_none(self):
        r = region_from_pixels([(3, j) for j in range(1, 7)], (8, 8))
        assert farthest_point(r) is None
        assert farthest_point(r, [(0, 0)]) is None  # all-border regardless of clicks

    def test_result_in_region_never_on_border_without_clicks(self, rng):
        for _ in range(50):
            mask = random_blob_mask(rng, (24, 24), n_seeds=1, steps=120)
            for r in connected_components(mask):
                got = farthest_point(r)
                if got is None:
                    assert r.is_all_border()
                    continue
                assert got in r.pixels
                assert got not in r.border

    def test_matches_exhaustive_argmax(self, rng):
        for _ in range(200):
            mask = random_blob_mask(rng, (64, 64), n_seeds=1, steps=200)
            regions = connected_components(mask)
            r = regions[0]
            n_prev = int(rng.integers(0, 4))
            prev = [
                (int(rng.integers(64)), int(rng.integers(64))) for _ in range(n_prev)
            ]
            got = farthest_point(r, prev)
            want = exhaustive_farthest_point(r.pixels, r.border, prev)
            assert got == want


class TestErrorRegions:
    def test_identical_masks(self, rng):
        mask = random_blob_mask(rng, (16, 16))
        errs = error_regions(mask, mask)
        assert errs.false_negative == [] and errs.false_positive == []

    def test_pure_false_positive(self):
        gt = np.zeros((8, 8))
        pred = np.zeros((8, 8))
        pred[2:4, 2:4] = 1
        errs = error_regions(gt, pred)
        assert errs.false_negative == []
        assert len(errs.false_positive) == 1
        assert errs.false_positive[0].area == 4

    def test_matches_set_differences(self, rng):
        for _ in range(100):
            gt = random_blob_mask(rng, (32, 32))
            pred = random_blob_mask(rng, (32, 32))
            errs = error_regions(gt, pred)
            fn_pixels = set().union(*(r.pixels for r in errs.false_negative), set())
            fp_pixels = set().union(*(r.pixels for r in errs.false_positive), set())
            want_fn = {
                (i, j) for (i, j) in np.argwhere(gt).tolist() if not pred[i, j]
            }
            want_fp = {
                (i, j) for (i, j) in np.argwhere(pred).tolist() if not gt[i, j]
            }
            assert {(int(i), int(j)) for (i, j) in fn_pixels} == want_fn
            assert {(int(i), int(j)) for (i, j) in fp_pixels} == want_fp
            assert not (fn_pixels & fp_pixels)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            error_regions(np.zeros((4, 4)), np.zeros((4, 5)))


class TestLargestRegion:
    def test_empty(self):
        assert largest_region([]) is None

    def test_tie_goes_to_smallest_label(self):
        mask = np.zeros((8, 8))
        mask[0, 0:3] = 1   # area 3, label 1
        mask[3, 0:7] = 1   # area 7, label 2
        mask[6, 1:8] = 1   # area 7, label 3
        regions = connected_components(mask)
        assert [r.area for r in regions] == [3, 7, 7]
        assert largest_region(regions).label == 2

    def test_matches_linear_scan(self, rng):
        for _ in range(20):
            mask = random_blob_mask(rng, (24, 24), n_seeds=4)
            regions = connected_components(mask)
            if not regions:
                continue
            got = largest_region(regions)
            best = regions[0]
            for r in regions[1:]:
                if r.area > best.area:
                    best = r
            assert got.area == best.area and got.label <= best.label
