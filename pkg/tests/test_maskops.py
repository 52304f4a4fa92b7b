import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anomsynth.maskops import (
    Blob, connected_components, default_min_area, denoise, dilate, erode, filter_blobs, morph,
)

masks = arrays(np.bool_, st.tuples(st.integers(1, 16), st.integers(1, 16)))


def morph_oracle(mask, op, r):
    """Direct per-pixel max/min over the (2r+1)^2 window, outside = background."""
    H, W = mask.shape
    out = np.zeros_like(mask)
    for y in range(H):
        for x in range(W):
            vals = []
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    vals.append(bool(mask[yy, xx]) if 0 <= yy < H and 0 <= xx < W else False)
            out[y, x] = any(vals) if op == "dilate" else all(vals)
    return out


def flood_fill_oracle(mask):
    """Reference 8-connected labelling by explicit stack-based flood fill."""
    H, W = mask.shape
    seen = np.zeros_like(mask)
    comps = []
    for y in range(H):
        for x in range(W):
            if mask[y, x] and not seen[y, x]:
                stack, pix = [(y, x)], []
                seen[y, x] = True
                while stack:
                    cy, cx = stack.pop()
                    pix.append((cy, cx))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < H and 0 <= nx < W and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                stack.append((ny, nx))
                comps.append(frozenset(pix))
    return comps


class TestMorph:
    def test_isolated_pixel_erodes_away(self):
        m = np.zeros((5, 5), bool)
        m[2, 2] = True
        assert not erode(m, 1).any()

    def test_dilate_single_pixel(self):
        m = np.zeros((5, 5), bool)
        m[2, 2] = True
        out = dilate(m, 1)
        assert out.sum() == 9 and out[1:4, 1:4].all()

    def test_open_removes_noise_keeps_block(self):
        m = np.zeros((12, 12), bool)
        m[3:8, 3:8] = True
        m[0, 11] = m[10, 1] = True
        out = morph(m, "open", 1)
        assert not out[0, 11] and not out[10, 1]
        assert out[3:8, 3:8].all()
        np.testing.assert_array_equal(out, morph_oracle(morph_oracle(m, "erode", 1), "dilate", 1))

    def test_borders_are_background(self):
        m = np.ones((4, 4), bool)
        out = erode(m, 1)
        assert out.sum() == 4 and out[1:3, 1:3].all()

    def test_radius_validated(self):
        with pytest.raises(ValueError):
            morph(np.zeros((3, 3), bool), "open", 0)
        with pytest.raises(ValueError):
            morph(np.zeros((3, 3), bool), "blur", 1)

    @given(masks, st.integers(1, 3))
    def test_matches_oracle(self, m, r):
        np.testing.assert_array_equal(dilate(m, r), morph_oracle(m, "dilate", r))
        np.testing.assert_array_equal(erode(m, r), morph_oracle(m, "erode", r))
        closed = morph_oracle(morph_oracle(m, "dilate", r), "erode", r)
        np.testing.assert_array_equal(morph(m, "close", r), closed)

    @given(masks, st.integers(1, 2))
    def test_extensive_and_idempotent(self, m, r):
        assert np.all(dilate(m, r) >= m)
        assert np.all(erode(m, r) <= m)
        for op in ("open", "close"):
            once = morph(m, op, r)
            np.testing.assert_array_equal(morph(once, op, r), once)

    def test_denoise_is_open_then_close(self, rng):
        m = rng.random((20, 20)) > 0.6
        np.testing.assert_array_equal(denoise(m), morph(morph(m, "open", 1), "close", 1))


class TestComponents:
    def test_empty(self):
        assert connected_components(np.zeros((4, 4), bool)) == []

    def test_two_squares(self):
        m = np.zeros((8, 8), bool)
        m[1:3, 1:3] = True
        m[5:7, 4:6] = True
        blobs = connected_components(m)
        assert [b.area for b in blobs] == [4, 4]
        assert [b.bbox for b in blobs] == [(1, 1, 2, 2), (4, 5, 2, 2)]

    def test_diagonal_chain_is_one_blob(self):
        m = np.eye(6, dtype=bool)
        blobs = connected_components(m)
        assert len(blobs) == 1 and blobs[0].bbox == (0, 0, 6, 6) and blobs[0].area == 6

    def test_sorted_by_area_then_origin(self):
        m = np.zeros((10, 10), bool)
        m[0, 8] = True
        m[5:8, 5:8] = True
        m[0, 0] = True
        blobs = connected_components(m)
        assert [b.area for b in blobs] == [9, 1, 1]
        assert [b.bbox[:2] for b in blobs[1:]] == [(0, 0), (8, 0)]

    @given(masks)
    def test_matches_flood_fill(self, m):
        blobs = connected_components(m)
        got = []
        for b in blobs:
            x, y, w, h = b.bbox
            assert b.mask.shape == (h, w)
            assert b.area == int(b.mask.sum()) and 1 <= b.area <= w * h
            # tight box: every edge row and column has a set bit
            assert b.mask[0].any() and b.mask[-1].any() and b.mask[:, 0].any() and b.mask[:, -1].any()
            got.append(frozenset((y + yy, x + xx) for yy, xx in np.argwhere(b.mask)))
        assert sorted(map(sorted, got)) == sorted(map(sorted, flood_fill_oracle(m)))
        assert sum(b.area for b in blobs) == int(m.sum())
        keys = [(-b.area, b.y, b.x) for b in blobs]
        assert keys == sorted(keys)


class TestFilter:
    def test_identity_at_zero(self, rng):
        blobs = connected_components(rng.random((12, 12)) > 0.7)
        assert filter_blobs(blobs, 0) == blobs

    def test_strict_threshold(self):
        b = Blob(0, 0, 3, 1, np.ones((1, 3), bool))
        assert filter_blobs([b], 4) == []
        assert filter_blobs([b], 3) == [b]

    @given(masks, st.integers(0, 10))
    def test_matches_recount(self, m, k):
        blobs = connected_components(m)
        kept = filter_blobs(blobs, k)
        assert kept == [b for b in blobs if int(b.mask.sum()) >= k]

    def test_negative_min_area(self):
        with pytest.raises(ValueError):
            filter_blobs([], -1)

    def test_default_min_area(self):
        assert default_min_area(160, 128) == 20
