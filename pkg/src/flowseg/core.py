"""Binary-mask set arithmetic, bounding boxes, scored per-frame masks, and the
maximum-weight assignment solver that all mask matching goes through.

Masks are 2-D numpy boolean arrays of shape (height, width). Pixel points are
(x, y) pairs with x = column and y = row; bounding boxes use the same axes
with inclusive-exclusive extents.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyMaskError, ParameterError, ShapeError

__all__ = [
    "Assignment",
    "BBox",
    "FrameMasks",
    "ScoredMask",
    "as_mask",
    "bbox_iou",
    "empty_mask",
    "iou",
    "iou_matrix",
    "mask_area",
    "solve_assignment",
    "tight_bbox",
]


def as_mask(a) -> np.ndarray:
    """Coerce ``a`` to a 2-D boolean mask, validating its shape."""
    m = np.asarray(a)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"mask must be a 2-D grid with positive extent, got shape {m.shape}")
    if m.dtype != np.bool_:
        m = m != 0
    return m


def empty_mask(height: int, width: int) -> np.ndarray:
    if height < 1 or width < 1:
        raise ShapeError(f"mask extent must be positive, got {height}x{width}")
    return np.zeros((height, width), dtype=bool)


def mask_area(m) -> int:
    return int(np.count_nonzero(as_mask(m)))


def _frozen_mask(mask) -> np.ndarray:
    m = as_mask(mask).copy()
    m.setflags(write=False)
    return m


def iou(a, b) -> float:
    """Intersection-over-union of two same-sized masks.

    Two empty masks have IoU 0 by convention, which keeps matching matrices
    finite and stops absent objects from pairing up with full confidence.
    """
    ma, mb = as_mask(a), as_mask(b)
    if ma.shape != mb.shape:
        raise ShapeError(f"mask shapes differ: {ma.shape} vs {mb.shape}")
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    inter = np.count_nonzero(ma & mb)
    return inter / union


def iou_matrix(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise IoU of two mask lists as a |a| x |b| float matrix."""
    masks_a = [as_mask(m) for m in a]
    masks_b = [as_mask(m) for m in b]
    shapes = {m.shape for m in masks_a} | {m.shape for m in masks_b}
    if len(shapes) > 1:
        raise ShapeError(f"all masks must share dimensions, got {sorted(shapes)}")
    out = np.zeros((len(masks_a), len(masks_b)), dtype=np.float64)
    for i, ma in enumerate(masks_a):
        for j, mb in enumerate(masks_b):
            union = np.count_nonzero(ma | mb)
            if union:
                out[i, j] = np.count_nonzero(ma & mb) / union
    return out


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, inclusive-exclusive: x in [x0, x1), y in [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ParameterError(f"degenerate box ({self.x0},{self.y0},{self.x1},{self.y1})")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height


def tight_bbox(m) -> BBox:
    """Smallest box containing every set pixel. Raises on an empty mask."""
    mm = as_mask(m)
    rows = np.flatnonzero(mm.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("cannot take the bounding box of an empty mask")
    cols = np.flatnonzero(mm.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def bbox_iou(a: BBox, b: BBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Assignment:
    """An injective row-to-column matching and the weight it collects."""

    row_to_col: Dict[int, int]
    total_weight: float

    def __post_init__(self):
        cols = list(self.row_to_col.values())
        if len(set(cols)) != len(cols):
            raise ParameterError("assignment is not injective")

    @property
    def pairs(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(sorted(self.row_to_col.items()))

    def col_of(self, row: int) -> Optional[int]:
        return self.row_to_col.get(row)


# Problems whose candidate-assignment count stays below this cap are solved by
# direct enumeration, which makes the lexicographic tie-break exact. Larger
# problems go through scipy with a constrain-and-check refinement pass.
_ENUMERATION_CAP = 50_000

_injection_cache: Dict[Tuple[int, int], np.ndarray] = {}


def _injection_table(k: int, n: int) -> np.ndarray:
    """All injective maps {0..k-1} -> {0..n-1}, one per row, lexicographic."""
    key = (k, n)
    table = _injection_cache.get(key)
    if table is None:
        table = np.array(list(itertools.permutations(range(n), k)), dtype=np.intp)
        table = table.reshape(-1, k)
        _injection_cache[key] = table
    return table


def _sequential_weight(w: np.ndarray, mapping: Dict[int, int]) -> float:
    total = 0.0
    for r in sorted(mapping):
        total += float(w[r, mapping[r]])
    return total


def _assign_by_enumeration(w: np.ndarray) -> Dict[int, int]:
    n, m = w.shape
    if n <= m:
        choices = _injection_table(n, m)
        totals = w[np.arange(n)[None, :], choices].sum(axis=1)
        # Rows of the injection table are lexicographically ordered, so the
        # first maximum is the lexicographically smallest optimal matching.
        best = int(np.argmax(totals))
        return {i: int(choices[best, i]) for i in range(n)}
    # More rows than columns: enumerate which row each column takes, then pick
    # the optimum whose per-row column vector (unassigned rows sort last) is
    # lexicographically smallest.
    choices = _injection_table(m, n)
    totals = w[choices, np.arange(m)[None, :]].sum(axis=1)
    cand = np.flatnonzero(totals == totals.max())
    keys = np.full((cand.size, n), m, dtype=np.intp)
    keys[np.arange(cand.size)[:, None], choices[cand]] = np.arange(m)[None, :]
    pick = cand[np.lexsort(keys.T[::-1])[0]]
    return {int(choices[pick, c]): c for c in range(m)}


def _assign_by_lsap(w: np.ndarray) -> Dict[int, int]:
    n, m = w.shape
    k = min(n, m)
    rows, cols = linear_sum_assignment(w, maximize=True)
    base = dict(zip(rows.tolist(), cols.tolist()))
    best = _sequential_weight(w, base)

    fixed: Dict[int, int] = {}
    used_cols: set = set()
    for r in range(n):
        if len(fixed) == k:
            break
        need_after = k - len(fixed) - 1
        for c in range(m):
            if c in used_cols:
                continue
            candidate = dict(fixed)
            candidate[r] = c
            if need_after > 0:
                sub_rows = np.arange(r + 1, n)
                sub_cols = np.array([j for j in range(m) if j not in used_cols and j != c])
                if min(sub_rows.size, sub_cols.size) < need_after:
                    continue
                rr, cc = linear_sum_assignment(w[np.ix_(sub_rows, sub_cols)], maximize=True)
                for i, j in zip(rr.tolist(), cc.tolist()):
                    candidate[int(sub_rows[i])] = int(sub_cols[j])
            if len(candidate) == k and _sequential_weight(w, candidate) == best:
                fixed[r] = c
                used_cols.add(c)
                break
    if len(fixed) == k:
        return fixed
    # Floating-point noise kept a mathematically optimal branch from matching
    # the incumbent weight exactly; fall back to scipy's (deterministic) result.
    return base


def solve_assignment(weights) -> Assignment:
    """Maximum-weight injective matching covering min(rows, cols) pairs.

    Ties between optima are broken deterministically: the result is the one
    whose per-row column vector (unassigned rows sorting last) is
    lexicographically smallest, so repeated runs match bit for bit.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"weight matrix must be 2-D, got shape {w.shape}")
    n, m = w.shape
    if n == 0 or m == 0:
        return Assignment({}, 0.0)
    if not np.isfinite(w).all():
        raise ParameterError("assignment weights must be finite")
    if math.perm(max(n, m), min(n, m)) <= _ENUMERATION_CAP:
        mapping = _assign_by_enumeration(w)
    else:
        mapping = _assign_by_lsap(w)
    return Assignment(dict(sorted(mapping.items())), _sequential_weight(w, mapping))


@dataclass(frozen=True)
class ScoredMask:
    """A predicted object mask with its objectness scores and layer rank.

    ``fiou`` is the foreground-object IoU score (0 for background masks) and
    ``mos`` the optional moving-object score. ``layer_rank`` orders overlap
    resolution, 0 being frontmost.
    """

    mask: np.ndarray
    fiou: float
    mos: Optional[float] = None
    layer_rank: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mask", _frozen_mask(self.mask))
        if not 0.0 <= self.fiou <= 1.0:
            raise ParameterError(f"fiou must be in [0, 1], got {self.fiou}")
        if self.mos is not None and not 0.0 <= self.mos <= 1.0:
            raise ParameterError(f"mos must be in [0, 1], got {self.mos}")

    @property
    def combined_score(self) -> float:
        if self.mos is None:
            return self.fiou
        return (self.mos + self.fiou) / 2.0

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))

    def with_mask(self, mask) -> "ScoredMask":
        return replace(self, mask=mask)


@dataclass(frozen=True)
class FrameMasks:
    """Per-frame object masks in layer order (front first)."""

    frame_index: int
    objects: Tuple[ScoredMask, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        shapes = {o.mask.shape for o in self.objects}
        if len(shapes) > 1:
            raise ShapeError(f"objects must share dimensions, got {sorted(shapes)}")
        ranks = [o.layer_rank for o in self.objects]
        if len(set(ranks)) != len(ranks):
            raise ParameterError(f"layer ranks must be unique, got {ranks}")

    def __len__(self) -> int:
        return len(self.objects)

    @property
    def shape(self) -> Optional[Tuple[int, int]]:
        return self.objects[0].mask.shape if self.objects else None

    def masks(self) -> list:
        return [o.mask for o in self.objects]
