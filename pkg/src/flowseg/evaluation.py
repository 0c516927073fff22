"""Segmentation metrics (region J, boundary F, detection success rate), the
frame- and sequence-level Hungarian evaluation protocols, and reference
implementations of the training losses for checking external pipelines.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .association import SequenceTracks
from .core import BBox, FrameMasks, as_mask, bbox_iou, iou, iou_matrix, solve_assignment, tight_bbox
from .errors import ParameterError, ShapeError

__all__ = [
    "EvalReport",
    "LossWeights",
    "SuccessRates",
    "boundary_f",
    "evaluate_sequence",
    "f_measure",
    "hungarian_protocol_match",
    "j_measure",
    "loss_flowi",
    "loss_flowp",
    "moca_sr",
]

log = logging.getLogger(__name__)

PROTOCOLS = ("frame", "sequence")

SR_THRESHOLDS = tuple(0.5 + 0.05 * k for k in range(10))

_BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Scale factors for the score terms of the training losses."""

    lambda_f: float = 0.01
    lambda_m: float = 0.01

    def __post_init__(self):
        if self.lambda_f < 0 or self.lambda_m < 0:
            raise ParameterError("loss weights must be nonnegative")


@dataclass
class EvalReport:
    protocol: str
    per_sequence: Dict[str, Dict[str, float]]
    aggregate: Dict[str, float]
    sr: Optional[Dict[str, "SuccessRates"]] = None


@dataclass
class SuccessRates:
    per_threshold: Dict[float, float]
    mean: float


FrameSeq = Union[SequenceTracks, Sequence[FrameMasks], Sequence[Sequence[np.ndarray]]]


def _object_frames(x: FrameSeq) -> List[List[np.ndarray]]:
    """Normalize tracks / per-frame masks to a T-long list of mask lists."""
    if isinstance(x, SequenceTracks):
        return [list(masks) for masks in x.frames]
    out: List[List[np.ndarray]] = []
    for entry in x:
        if isinstance(entry, FrameMasks):
            out.append(entry.masks())
        else:
            out.append([as_mask(m) for m in entry])
    return out


def _padded(frames: List[List[np.ndarray]], shape: Tuple[int, int]) -> List[List[np.ndarray]]:
    count = max((len(f) for f in frames), default=0)
    blank = np.zeros(shape, dtype=bool)
    return [list(f) + [blank] * (count - len(f)) for f in frames]


def _common_shape(*frame_lists: List[List[np.ndarray]]) -> Tuple[int, int]:
    shapes = {m.shape for frames in frame_lists for f in frames for m in f}
    if len(shapes) > 1:
        raise ShapeError(f"masks must share dimensions, got {sorted(shapes)}")
    if not shapes:
        raise ParameterError("no masks to evaluate")
    return shapes.pop()


def hungarian_protocol_match(pred: FrameSeq, gt: FrameSeq, protocol: str) -> List[Dict[int, int]]:
    """Match predicted objects to GT objects under one of the two protocols.

    Returns one GT-index -> pred-index map per frame. The frame protocol
    recomputes an independent max-IoU assignment every frame; the sequence
    protocol fixes identities once, maximizing the summed per-object mean IoU
    over the frames where each GT object is present. GT objects left
    unmatched simply score 0 downstream.
    """
    if protocol not in PROTOCOLS:
        raise ParameterError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    pred_f = _object_frames(pred)
    gt_f = _object_frames(gt)
    if len(pred_f) != len(gt_f):
        raise ShapeError(f"frame counts differ: {len(pred_f)} pred vs {len(gt_f)} gt")
    if not any(m.any() for f in gt_f for m in f):
        raise ParameterError("ground truth has no objects")
    shape = _common_shape(pred_f, gt_f)

    if protocol == "frame":
        return [dict(solve_assignment(iou_matrix(g, p)).row_to_col) for g, p in zip(gt_f, pred_f)]

    pred_f = _padded(pred_f, shape)
    gt_f = _padded(gt_f, shape)
    n_gt = len(gt_f[0])
    n_pred = len(pred_f[0])
    weights = np.zeros((n_gt, n_pred))
    for i in range(n_gt):
        present = [t for t in range(len(gt_f)) if gt_f[t][i].any()]
        if not present:
            continue
        for j in range(n_pred):
            weights[i, j] = sum(iou(gt_f[t][i], pred_f[t][j]) for t in present) / len(present)
    mapping = dict(solve_assignment(weights).row_to_col)
    return [mapping for _ in gt_f]


def _mean_over_terms(
    pred: FrameSeq,
    gt: FrameSeq,
    matching: Optional[List[Dict[int, int]]],
    pair_metric,
) -> float:
    """Pooled mean of a per-pair metric over every (object, frame) term where
    the GT object is present; absent-GT frames contribute no term.
    """
    pred_f = _object_frames(pred)
    gt_f = _object_frames(gt)
    if len(pred_f) != len(gt_f):
        raise ShapeError(f"frame counts differ: {len(pred_f)} pred vs {len(gt_f)} gt")
    shape = _common_shape(pred_f, gt_f)
    blank = np.zeros(shape, dtype=bool)
    total = 0.0
    terms = 0
    for t, (g_masks, p_masks) in enumerate(zip(gt_f, pred_f)):
        for i, g in enumerate(g_masks):
            if not g.any():
                continue
            if matching is None:
                j: Optional[int] = i if i < len(p_masks) else None
            else:
                j = matching[t].get(i)
            p = p_masks[j] if j is not None and j < len(p_masks) else blank
            total += pair_metric(p, g, shape)
            terms += 1
    if terms == 0:
        raise ParameterError("ground truth has no present objects to score")
    return total / terms


def j_measure(pred: FrameSeq, gt: FrameSeq, matching: Optional[List[Dict[int, int]]] = None) -> float:
    """Region similarity: mean IoU over matched (object, frame) pairs.

    ``matching`` is the output of :func:`hungarian_protocol_match`; without it
    object indices are compared positionally.
    """
    return _mean_over_terms(pred, gt, matching, lambda p, g, shape: iou(p, g))


def _boundary(mask: np.ndarray) -> np.ndarray:
    return mask & ~binary_erosion(mask)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    return xx * xx + yy * yy <= radius * radius


def boundary_f(pred, gt, tolerance_ratio: float = 0.008) -> float:
    """Boundary F-score of one mask pair.

    One-pixel boundaries are matched within a dilation radius of
    ceil(tolerance_ratio * image diagonal); F = 2PR/(P+R).
    """
    p = as_mask(pred)
    g = as_mask(gt)
    if p.shape != g.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {g.shape}")
    radius = math.ceil(tolerance_ratio * math.hypot(*p.shape))
    pb = _boundary(p)
    gb = _boundary(g)
    n_p = int(pb.sum())
    n_g = int(gb.sum())
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    disk = _disk(radius)
    precision = int((pb & binary_dilation(gb, disk)).sum()) / n_p
    recall = int((gb & binary_dilation(pb, disk)).sum()) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f_measure(pred: FrameSeq, gt: FrameSeq, matching: Optional[List[Dict[int, int]]] = None) -> float:
    """Contour accuracy: mean boundary F over matched (object, frame) pairs."""
    return _mean_over_terms(pred, gt, matching, lambda p, g, shape: boundary_f(p, g))


def evaluate_sequence(pred: FrameSeq, gt: FrameSeq, protocol: str) -> Dict[str, float]:
    """J, F and J&F of one sequence under the requested protocol."""
    matching = hungarian_protocol_match(pred, gt, protocol)
    j = j_measure(pred, gt, matching)
    f = f_measure(pred, gt, matching)
    return {"J_mean": j, "F_mean": f, "JF_mean": (j + f) / 2.0}


def evaluate_dataset(per_sequence: Mapping[str, Dict[str, float]], protocol: str) -> EvalReport:
    """Aggregate per-sequence scores into a dataset report (plain means)."""
    if not per_sequence:
        raise ParameterError("no sequences to aggregate")
    keys = ("J_mean", "F_mean", "JF_mean")
    ordered = dict(sorted(per_sequence.items()))
    aggregate = {k: sum(v[k] for v in ordered.values()) / len(ordered) for k in keys}
    return EvalReport(protocol, ordered, aggregate)


def moca_sr(
    pred: FrameSeq,
    gt_boxes: Mapping[int, Optional[BBox]],
    thresholds: Sequence[float] = SR_THRESHOLDS,
) -> SuccessRates:
    """Detection success rate against per-frame GT boxes.

    A frame succeeds at threshold tau when the box around the union of
    predicted masks overlaps the GT box with IoU >= tau; frames without a GT
    box are skipped with a warning. Also reports the mean SR over thresholds.
    """
    pred_f = _object_frames(pred)
    successes = {float(t): 0 for t in thresholds}
    counted = 0
    for t, masks in enumerate(pred_f):
        box = gt_boxes.get(t)
        if box is None:
            log.warning("no GT box for frame %d; skipping", t)
            continue
        counted += 1
        union = None
        for m in masks:
            union = m.copy() if union is None else union | m
        if union is None or not union.any():
            continue
        overlap = bbox_iou(tight_bbox(union), box)
        for tau in successes:
            if overlap >= tau:
                successes[tau] += 1
    if counted == 0:
        raise ParameterError("no frames with GT boxes to score")
    rates = {tau: successes[tau] / counted for tau in successes}
    return SuccessRates(rates, sum(rates.values()) / len(rates))


def _as_prob_array(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ParameterError(f"{name} must lie in [0, 1] before clamping")
    return a


def _bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Clamp inside the logs only, so saturated-correct predictions cost
    # exactly zero while saturated-wrong ones stay finite.
    return -(y * np.log(np.maximum(p, _BCE_EPS)) + (1.0 - y) * np.log(np.maximum(1.0 - p, _BCE_EPS)))


def loss_flowi(pred_masks, pred_fious, gt_masks, gt_fious, w: LossWeights = LossWeights()) -> float:
    """Reference loss for the flow-input model: per-mask BCE plus the
    lambda_f-scaled squared fIoU error, averaged over (object, frame) samples.

    ``pred_masks`` holds per-pixel probabilities stacked as (K, H, W) with K
    samples; ``gt_masks`` the binary targets; the fIoU arrays are (K,).
    """
    p = _as_prob_array(pred_masks, "pred_masks")
    y = np.asarray(gt_masks, dtype=np.float64)
    if p.shape != y.shape or p.ndim < 3:
        raise ShapeError(f"mask stacks must share (K, H, W) shapes, got {p.shape} vs {y.shape}")
    s = np.asarray(pred_fious, dtype=np.float64).reshape(-1)
    s_hat = np.asarray(gt_fious, dtype=np.float64).reshape(-1)
    if s.shape != s_hat.shape or s.shape[0] != p.shape[0]:
        raise ShapeError("fIoU arrays must have one entry per mask sample")
    bce = _bce(p, y).reshape(p.shape[0], -1).mean(axis=1)
    terms = bce + w.lambda_f * (s - s_hat) ** 2
    return float(terms.mean())


def loss_flowp(
    pred_masks,
    pred_fious,
    pred_mos,
    gt_masks,
    gt_fious,
    gt_mos,
    w: LossWeights = LossWeights(),
) -> float:
    """Reference loss for the flow-prompted model: adds the lambda_m-scaled
    BCE between predicted and binary target MOS scores. Reduces to
    :func:`loss_flowi` at lambda_m = 0.
    """
    base = loss_flowi(pred_masks, pred_fious, gt_masks, gt_fious, w)
    mos = _as_prob_array(pred_mos, "pred_mos").reshape(-1)
    mos_hat = np.asarray(gt_mos, dtype=np.float64).reshape(-1)
    if mos.shape != mos_hat.shape:
        raise ShapeError("MOS arrays must have one entry per mask sample")
    if mos_hat.size and not np.isin(mos_hat, (0.0, 1.0)).all():
        raise ParameterError("MOS targets must be binary")
    return base + w.lambda_m * float(_bce(mos, mos_hat).mean())
