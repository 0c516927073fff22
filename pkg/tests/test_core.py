import itertools

import numpy as np
import pytest

from flowseg.core import (
    Assignment,
    BBox,
    FrameMasks,
    ScoredMask,
    bbox_iou,
    iou,
    iou_matrix,
    solve_assignment,
    tight_bbox,
)
from flowseg.errors import EmptyMaskError, ParameterError, ShapeError

from conftest import random_mask


def brute_force_assignment(w):
    """Exhaustive search over every injective matching covering min(n, m)
    pairs; sums entries in row order, like the solver's weight accounting.
    """
    w = np.asarray(w, dtype=np.float64)
    n, m = w.shape
    best = None
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            total = 0.0
            for r in range(n):
                total += float(w[r, cols[r]])
            if best is None or total > best:
                best = total
    else:
        for rows in itertools.permutations(range(n), m):
            pairs = sorted((r, c) for c, r in enumerate(rows))
            total = 0.0
            for r, c in pairs:
                total += float(w[r, c])
            if best is None or total > best:
                best = total
    return best


class TestIou:
    def test_identical_nonempty(self):
        m = np.zeros((3, 3), dtype=bool)
        m[1, :] = True
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((2, 4), dtype=bool)
        b = np.zeros((2, 4), dtype=bool)
        a[0, 0] = True
        b[1, 3] = True
        assert iou(a, b) == 0.0

    def test_two_by_two_case(self):
        a = np.zeros((2, 2), dtype=bool)
        b = np.zeros((2, 2), dtype=bool)
        a[0, 0] = a[0, 1] = True
        b[0, 1] = b[1, 1] = True
        # Brute-force pixel enumeration: intersection {(0,1)}, union
        # {(0,0),(0,1),(1,1)} -> 1/3.
        inter = sum(1 for y in range(2) for x in range(2) if a[y, x] and b[y, x])
        union = sum(1 for y in range(2) for x in range(2) if a[y, x] or b[y, x])
        assert inter == 1 and union == 3
        assert iou(a, b) == inter / union

    def test_both_empty_is_zero(self):
        e = np.zeros((2, 2), dtype=bool)
        assert iou(e, e) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            iou(np.zeros((2, 2), dtype=bool), np.zeros((2, 3), dtype=bool))

    def test_symmetry_and_self(self, rng):
        for _ in range(50):
            a = random_mask(rng, 8, 10)
            b = random_mask(rng, 8, 10)
            assert iou(a, b) == iou(b, a)
            assert iou(a, a) == 1.0

    def test_monotone_under_intersection_growth(self, rng):
        # On a fixed union, growing the intersection can only raise the IoU.
        for _ in range(25):
            a = random_mask(rng, 8, 10)
            b = random_mask(rng, 8, 10)
            gained = (a | b) & ~a
            ys, xs = np.nonzero(gained)
            if ys.size == 0:
                continue
            grown = a.copy()
            grown[ys[0], xs[0]] = True  # union unchanged, intersection may grow
            assert np.array_equal(grown | b, a | b)
            assert iou(grown, b) >= iou(a, b)


class TestIouMatrix:
    def test_single(self):
        m = np.ones((2, 2), dtype=bool)
        assert iou_matrix([m], [m]).tolist() == [[1.0]]

    def test_swapped_pair_antidiagonal(self):
        a = np.zeros((2, 4), dtype=bool)
        b = np.zeros((2, 4), dtype=bool)
        a[:, :2] = True
        b[:, 2:] = True
        mat = iou_matrix([a, b], [b, a])
        assert mat.tolist() == [[0.0, 1.0], [1.0, 0.0]]

    def test_entrywise_against_iou(self, rng):
        preds = [random_mask(rng, 6, 9) for _ in range(2)]
        gts = [random_mask(rng, 6, 9) for _ in range(3)]
        mat = iou_matrix(preds, gts)
        assert mat.shape == (2, 3)
        for i in range(2):
            for j in range(3):
                assert mat[i, j] == iou(preds[i], gts[j])

    def test_empty_list(self):
        m = np.ones((2, 2), dtype=bool)
        assert iou_matrix([], [m]).shape == (0, 1)
        assert iou_matrix([m], []).shape == (1, 0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            iou_matrix([np.ones((2, 2), dtype=bool)], [np.ones((3, 2), dtype=bool)])


class TestSolveAssignment:
    def test_identity_matrix(self):
        res = solve_assignment(np.eye(3))
        assert res.row_to_col == {0: 0, 1: 1, 2: 2}
        assert res.total_weight == 3.0

    def test_two_by_two_example(self):
        # Exhaustive: diagonal 1+4=5 beats anti-diagonal 2+2=4.
        res = solve_assignment([[1.0, 2.0], [2.0, 4.0]])
        assert res.row_to_col == {0: 0, 1: 1}
        assert res.total_weight == 5.0

    def test_random_matches_brute_force(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 7))
            m = int(rng.integers(1, 7))
            w = rng.normal(size=(n, m))
            res = solve_assignment(w)
            assert res.total_weight == brute_force_assignment(w)
            assert len(res.row_to_col) == min(n, m)

    def test_nan_rejected(self):
        with pytest.raises(ParameterError):
            solve_assignment([[1.0, float("nan")]])
        with pytest.raises(ParameterError):
            solve_assignment([[float("inf"), 1.0]])

    def test_empty(self):
        assert solve_assignment(np.zeros((0, 3))).row_to_col == {}

    def test_constant_shift_invariance(self, rng):
        # Integer weights keep the arithmetic exact under the shift.
        for _ in range(50):
            n = int(rng.integers(1, 6))
            m = int(rng.integers(1, 6))
            w = rng.integers(-5, 6, size=(n, m)).astype(float)
            shift = float(rng.integers(-7, 8))
            assert solve_assignment(w).row_to_col == solve_assignment(w + shift).row_to_col

    def test_lexicographic_ties(self):
        assert solve_assignment(np.zeros((3, 3))).row_to_col == {0: 0, 1: 1, 2: 2}
        assert solve_assignment(np.ones((2, 2))).row_to_col == {0: 0, 1: 1}
        # More rows than columns: the tie goes to the smallest row.
        assert solve_assignment([[5.0], [5.0]]).row_to_col == {0: 0}

    def test_rectangular_covers_min(self):
        res = solve_assignment([[1.0, 9.0, 2.0]])
        assert res.row_to_col == {0: 1}
        assert res.total_weight == 9.0

    def test_injectivity_validated(self):
        with pytest.raises(ParameterError):
            Assignment({0: 1, 1: 1}, 0.0)


class TestBBox:
    def test_full_mask(self):
        res = tight_bbox(np.ones((4, 6), dtype=bool))
        assert (res.x0, res.y0, res.x1, res.y1) == (0, 0, 6, 4)

    def test_empty_mask(self):
        with pytest.raises(EmptyMaskError):
            tight_bbox(np.zeros((4, 6), dtype=bool))

    def test_bbox_iou_identical(self):
        b = BBox(1, 2, 5, 7)
        assert bbox_iou(b, b) == 1.0

    def test_bbox_iou_case(self):
        # Areas 16 and 16, intersection 2x2=4, union 28 -> 1/7.
        assert bbox_iou(BBox(0, 0, 4, 4), BBox(2, 2, 6, 6)) == 4 / 28

    def test_bbox_iou_disjoint(self):
        assert bbox_iou(BBox(0, 0, 2, 2), BBox(3, 3, 5, 5)) == 0.0

    def test_tight_bbox_covers_mask(self, rng):
        for _ in range(25):
            m = random_mask(rng, 9, 12)
            box = tight_bbox(m)
            assert box.area >= int(m.sum())
            assert not m[:, : box.x0].any() and not m[:, box.x1:].any()
            assert not m[: box.y0, :].any() and not m[box.y1:, :].any()

    def test_degenerate_box_rejected(self):
        with pytest.raises(ParameterError):
            BBox(3, 0, 3, 4)


class TestScoredTypes:
    def test_combined_score(self):
        m = np.ones((2, 2), dtype=bool)
        assert ScoredMask(m, fiou=0.8).combined_score == 0.8
        assert ScoredMask(m, fiou=0.8, mos=0.4).combined_score == pytest.approx(0.6)

    def test_score_bounds(self):
        m = np.ones((2, 2), dtype=bool)
        with pytest.raises(ParameterError):
            ScoredMask(m, fiou=1.5)
        with pytest.raises(ParameterError):
            ScoredMask(m, fiou=0.5, mos=-0.1)

    def test_mask_is_frozen(self):
        sm = ScoredMask(np.ones((2, 2), dtype=bool), fiou=1.0)
        with pytest.raises(ValueError):
            sm.mask[0, 0] = False

    def test_frame_masks_rank_uniqueness(self):
        m = np.ones((2, 2), dtype=bool)
        with pytest.raises(ParameterError):
            FrameMasks(0, (ScoredMask(m, 1.0, layer_rank=0), ScoredMask(m, 1.0, layer_rank=0)))

    def test_frame_masks_shape_check(self):
        with pytest.raises(ShapeError):
            FrameMasks(0, (
                ScoredMask(np.ones((2, 2), dtype=bool), 1.0, layer_rank=0),
                ScoredMask(np.ones((3, 2), dtype=bool), 1.0, layer_rank=1),
            ))
