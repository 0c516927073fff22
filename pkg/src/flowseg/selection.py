"""Frame-level mask selection: score-guided NMS over point-prompt candidates,
top-n retention with front-to-back layering, combination of two predictor
outputs, and the fIoU/MOS training-target reference functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import FrameMasks, ScoredMask, as_mask, iou, tight_bbox
from .errors import ParameterError, ShapeError

__all__ = [
    "CandidateSet",
    "SelectionConfig",
    "combine_predictions",
    "fiou_target",
    "grid_prompts",
    "mos_target",
    "nms",
    "select_frame",
]

SCORE_MODES = ("fiou", "mean_fiou_mos")


@dataclass(frozen=True)
class CandidateSet:
    """Unordered, possibly overlapping candidate masks, one per point prompt."""

    candidates: Tuple[ScoredMask, ...]
    grid_spec: int = 10

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        shapes = {c.mask.shape for c in self.candidates}
        if len(shapes) > 1:
            raise ShapeError(f"candidates must share dimensions, got {sorted(shapes)}")
        if self.grid_spec < 1:
            raise ParameterError(f"grid_spec must be positive, got {self.grid_spec}")


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for candidate-to-frame selection.

    ``top_n`` defaults to 5 for flow-only predictors and 10 for RGB-based
    ones; use the presets. The NMS threshold is not pinned upstream, so it is
    exposed (results are sensitive to it) with the standard 0.5 default.
    """

    nms_iou_threshold: float = 0.5
    top_n: int = 5
    score_mode: str = "fiou"
    min_score: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.nms_iou_threshold <= 1.0:
            raise ParameterError(f"nms_iou_threshold must be in (0, 1], got {self.nms_iou_threshold}")
        if self.top_n < 1:
            raise ParameterError(f"top_n must be positive, got {self.top_n}")
        if self.score_mode not in SCORE_MODES:
            raise ParameterError(f"score_mode must be one of {SCORE_MODES}, got {self.score_mode!r}")

    @classmethod
    def flow_only(cls, **kw) -> "SelectionConfig":
        kw.setdefault("top_n", 5)
        kw.setdefault("score_mode", "fiou")
        return cls(**kw)

    @classmethod
    def rgb_based(cls, **kw) -> "SelectionConfig":
        kw.setdefault("top_n", 10)
        kw.setdefault("score_mode", "mean_fiou_mos")
        return cls(**kw)


def _score(sm: ScoredMask, mode: str) -> float:
    if mode == "fiou":
        return sm.fiou
    if sm.mos is None:
        raise ParameterError("score_mode 'mean_fiou_mos' needs a MOS score on every candidate")
    return (sm.mos + sm.fiou) / 2.0


def _boxes_overlap(a, b) -> bool:
    return a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1


def nms(c: CandidateSet, cfg: SelectionConfig) -> List[ScoredMask]:
    """Greedy score-descending NMS.

    Candidates are visited by descending score (ties by candidate index); a
    mask is kept iff its IoU with every already-kept mask stays below the
    threshold. Empty masks and scores below the floor are dropped first.
    """
    ranked = sorted(
        (sm for sm in c.candidates if sm.area > 0 and _score(sm, cfg.score_mode) >= cfg.min_score),
        key=lambda sm: -_score(sm, cfg.score_mode),
    )
    kept: List[ScoredMask] = []
    kept_boxes = []
    for sm in ranked:
        box = tight_bbox(sm.mask)
        if all(
            not _boxes_overlap(box, kb) or iou(sm.mask, k.mask) < cfg.nms_iou_threshold
            for k, kb in zip(kept, kept_boxes)
        ):
            kept.append(sm)
            kept_boxes.append(box)
    return kept


def _layered(entries: Sequence[ScoredMask], frame_index: int) -> FrameMasks:
    # Front-to-back overlap resolution: the front mask owns contested pixels;
    # masks left empty cannot survive the palette-mask interchange, so drop.
    occupied = None
    out: List[ScoredMask] = []
    for sm in entries:
        if occupied is None:
            occupied = np.zeros_like(sm.mask)
        visible = sm.mask & ~occupied
        occupied |= visible
        if visible.any():
            out.append(ScoredMask(visible, sm.fiou, sm.mos, layer_rank=len(out)))
    return FrameMasks(frame_index, tuple(out))


def select_frame(c: CandidateSet, cfg: SelectionConfig, frame_index: int = 0) -> FrameMasks:
    """NMS, top-n cut, and layering: candidates to a disjoint FrameMasks."""
    survivors = nms(c, cfg)[: cfg.top_n]
    return _layered(survivors, frame_index)


def combine_predictions(front: FrameMasks, back: FrameMasks) -> FrameMasks:
    """Concatenate ``back`` behind ``front`` and remove overlaps.

    Front objects keep their pixels bit for bit; back objects lose every pixel
    owned by any front object and are dropped when nothing remains. Layer
    ranks are renumbered front first.
    """
    if front.shape and back.shape and front.shape != back.shape:
        raise ShapeError(f"frame shapes differ: {front.shape} vs {back.shape}")
    out: List[ScoredMask] = []
    front_union = None
    for sm in front.objects:
        if front_union is None:
            front_union = np.zeros_like(sm.mask)
        front_union |= sm.mask
        out.append(ScoredMask(sm.mask, sm.fiou, sm.mos, layer_rank=len(out)))
    for sm in back.objects:
        visible = sm.mask if front_union is None else sm.mask & ~front_union
        if visible.any():
            out.append(ScoredMask(visible, sm.fiou, sm.mos, layer_rank=len(out)))
    return FrameMasks(front.frame_index, tuple(out))


def _check_prompt(prompt, shape) -> Tuple[int, int]:
    x, y = int(prompt[0]), int(prompt[1])
    h, w = shape
    if not (0 <= x < w and 0 <= y < h):
        raise ParameterError(f"prompt ({x}, {y}) outside {w}x{h} frame")
    return x, y


def fiou_target(pred, prompt, gt: FrameMasks) -> float:
    """Ground-truth fIoU for a point prompt: 0 when the prompt lies on
    background, else the IoU between the prediction and the prompted object.
    """
    pred = as_mask(pred)
    x, y = _check_prompt(prompt, pred.shape)
    for sm in gt.objects:
        if sm.mask[y, x]:
            return iou(pred, sm.mask)
    return 0.0


def mos_target(prompt, gt: FrameMasks) -> int:
    """Binary moving-object score target: 1 iff the prompt hits a GT object."""
    shape = gt.shape
    if shape is None:
        return 0
    x, y = _check_prompt(prompt, shape)
    return int(any(sm.mask[y, x] for sm in gt.objects))


def grid_prompts(height: int, width: int, side: int) -> List[Tuple[int, int]]:
    """(x, y) points at the cell centers of a uniform side-by-side grid."""
    if side < 1:
        raise ParameterError(f"grid side must be positive, got {side}")
    if side > height or side > width:
        raise ParameterError(f"grid side {side} exceeds frame extent {height}x{width}")
    xs = [int((i + 0.5) * width / side) for i in range(side)]
    ys = [int((j + 0.5) * height / side) for j in range(side)]
    return [(x, y) for x in xs for y in ys]
