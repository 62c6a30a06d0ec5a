import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lesionloop.clicks import (
    Click,
    ClickCache,
    NEGATIVE,
    POSITIVE,
    click_from_record,
    click_record,
    encode_clicks,
)


class TestEncodeClicks:
    def test_value_one_at_click_pixel(self):
        cm = encode_clicks([(10, 10)], (32, 32))
        assert cm.plane[10, 10] == 1.0

    def test_value_at_distance_sigma(self):
        cm = encode_clicks([(10, 10)], (48, 48), sigma=10.0, clip_radius=30.0)
        # direct evaluation of the Gaussian at d = sigma
        assert cm.plane[10, 20] == pytest.approx(math.exp(-0.5), abs=1e-9)

    def test_zero_at_and_beyond_clip_radius(self):
        cm = encode_clicks([(20, 20)], (64, 64), sigma=10.0, clip_radius=10.0)
        ii, jj = np.mgrid[0:64, 0:64]
        d = np.sqrt((ii - 20.0) ** 2 + (jj - 20.0) ** 2)
        assert np.all(cm.plane[d >= 10.0] == 0.0)
        assert np.all(cm.plane[d < 10.0] > 0.0)

    def test_coincident_clicks_sum(self):
        cm = encode_clicks([(5, 5), (5, 5)], (16, 16))
        assert cm.plane[5, 5] == 2.0

    def test_additive_over_disjoint_sets(self):
        a = encode_clicks([(4, 4)], (32, 32))
        b = encode_clicks([(20, 25)], (32, 32))
        both = encode_clicks([(4, 4), (20, 25)], (32, 32))
        assert np.allclose(both.plane, a.plane + b.plane, atol=1e-12)

    def test_permutation_invariant(self):
        pts = [(3, 3), (10, 20), (17, 5)]
        a = encode_clicks(pts, (32, 32))
        b = encode_clicks(pts[::-1], (32, 32))
        assert np.allclose(a.plane, b.plane, atol=1e-12)

    def test_nonpositive_parameters(self):
        with pytest.raises(ValueError):
            encode_clicks([(1, 1)], (8, 8), sigma=0.0)
        with pytest.raises(ValueError):
            encode_clicks([(1, 1)], (8, 8), clip_radius=-1.0)

    def test_empty_click_list_is_zero_plane(self):
        cm = encode_clicks([], (8, 8))
        assert not cm.plane.any()

    @given(
        st.lists(
            st.tuples(st.integers(0, 23), st.integers(0, 23)),
            min_size=1, max_size=6,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_support_radius_property(self, pts):
        cm = encode_clicks(pts, (24, 24), sigma=4.0, clip_radius=8.0)
        nz = np.argwhere(cm.plane > 0)
        for (i, j) in nz:
            d = min(math.hypot(i - pi, j - pj) for (pi, pj) in pts)
            assert d < 8.0


class TestClickCache:
    def make(self, **kw):
        return ClickCache(n_slices=10, shape=(32, 32), **kw)

    def test_accepts_valid_click(self):
        cache = self.make()
        assert cache.add_click(Click(0, (3, 3), POSITIVE))

    def test_cap_is_per_polarity(self):
        cache = self.make()
        for j in range(12):
            assert cache.add_click(Click(2, (1, j), POSITIVE))
        assert not cache.add_click(Click(2, (5, 5), POSITIVE))  # 13th positive
        assert cache.add_click(Click(2, (5, 5), NEGATIVE))      # negative still fits
        assert len(cache.clicks(2, POSITIVE)) == 12

    def test_cap_is_per_slice(self):
        cache = self.make()
        for j in range(12):
            cache.add_click(Click(2, (1, j), POSITIVE))
        assert cache.add_click(Click(3, (1, 1), POSITIVE))

    def test_duplicate_rejected(self):
        cache = self.make()
        assert cache.add_click(Click(0, (3, 3), POSITIVE))
        assert not cache.add_click(Click(0, (3, 3), POSITIVE))
        assert len(cache.clicks(0, POSITIVE)) == 1
        # same position, other polarity is not a duplicate
        assert cache.add_click(Click(0, (3, 3), NEGATIVE))

    def test_out_of_bounds(self):
        cache = self.make()
        with pytest.raises(ValueError):
            cache.add_click(Click(0, (32, 3), POSITIVE))
        with pytest.raises(ValueError):
            cache.add_click(Click(10, (1, 1), POSITIVE))

    def test_never_resets_at_probability_zero(self):
        cache = self.make(reset_probability=0.0, seed=1)
        cache.add_click(Click(0, (1, 1), POSITIVE))
        assert not any(cache.maybe_reset() for _ in range(100))
        assert cache.clicks(0, POSITIVE)

    def test_always_resets_at_probability_one(self):
        cache = self.make(reset_probability=1.0, seed=1)
        cache.add_click(Click(0, (1, 1), POSITIVE))
        assert cache.maybe_reset()
        assert cache.clicks(0, POSITIVE) == []

    def test_reset_fraction_monte_carlo(self):
        cache = self.make(reset_probability=0.3, seed=1234)
        resets = sum(cache.maybe_reset() for _ in range(10000))
        assert abs(resets / 10000 - 0.3) <= 0.02

    @given(
        st.lists(
            st.tuples(
                st.integers(0, 4),
                st.integers(0, 7),
                st.integers(0, 7),
                st.sampled_from([POSITIVE, NEGATIVE]),
            ),
            max_size=80,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_caps_never_exceeded(self, seq):
        cache = ClickCache(n_slices=5, shape=(8, 8), max_per_polarity=3)
        for (k, i, j, pol) in seq:
            cache.add_click(Click(k, (i, j), pol))
        for k in range(5):
            assert len(cache.clicks(k, POSITIVE)) <= 3
            assert len(cache.clicks(k, NEGATIVE)) <= 3


class TestMasksForSlice:
    def test_no_clicks_two_zero_planes(self):
        cache = ClickCache(n_slices=4, shape=(16, 16))
        pos, neg = cache.masks_for_slice(1)
        assert not pos.plane.any() and not neg.plane.any()

    def test_positive_only(self):
        cache = ClickCache(n_slices=4, shape=(16, 16))
        cache.add_click(Click(1, (4, 4), POSITIVE))
        pos, neg = cache.masks_for_slice(1)
        assert pos.plane.any() and not neg.plane.any()

    def test_mixed_clicks_compose_per_polarity(self):
        cache = ClickCache(n_slices=4, shape=(16, 16))
        cache.add_click(Click(1, (4, 4), POSITIVE))
        cache.add_click(Click(1, (9, 2), POSITIVE))
        cache.add_click(Click(1, (8, 8), NEGATIVE))
        pos, neg = cache.masks_for_slice(1)
        want_pos = encode_clicks([(4, 4), (9, 2)], (16, 16))
        want_neg = encode_clicks([(8, 8)], (16, 16))
        assert np.array_equal(pos.plane, want_pos.plane)
        assert np.array_equal(neg.plane, want_neg.plane)


def test_click_jsonl_round_trip():
    click = Click(slice_index=3, position=(7, 9), polarity=NEGATIVE)
    rec = click_record(5, click)
    assert rec == {"t": 5, "k": 3, "i": 7, "j": 9, "polarity": "neg"}
    assert click_from_record(json.loads(json.dumps(rec))) == click
