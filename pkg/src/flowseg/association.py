"""Sequence-level mask association.

Tracks are seeded from frame 0 and advanced autoregressively: the previous
sequence-level masks are warped forward with optical flow, matched against the
current frame-level predictions and against flow-aligned neighboring frames by
three-way Hungarian matching, and each object independently either updates to
its matched current mask or keeps the warped previous one depending on the
averaged transitivity-consistency score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import FrameMasks, ScoredMask, iou_matrix, solve_assignment
from .errors import MissingInputError, ParameterError, ShapeError
from .flowio import FlowField, load_gap_flows, warp_mask

__all__ = [
    "AssocConfig",
    "ConsistencyRecord",
    "MODES",
    "SequenceTracks",
    "associate_sequence",
    "neighbor_align",
    "temporal_consistency_step",
    "threeway_hungarian",
]

log = logging.getLogger(__name__)

MODE_TEMPORAL = "temporal-consistency"
MODE_HUNGARIAN = "hungarian-only"
MODE_PROPAGATION = "propagation-only"
MODES = (MODE_TEMPORAL, MODE_HUNGARIAN, MODE_PROPAGATION)


@dataclass(frozen=True)
class AssocConfig:
    deltas: Tuple[int, ...] = (1, 2, -1, -2)
    mode: str = MODE_TEMPORAL

    def __post_init__(self):
        deltas = tuple(int(d) for d in self.deltas)
        if any(d == 0 for d in deltas):
            raise ParameterError("deltas must be nonzero")
        if len(set(deltas)) != len(deltas):
            raise ParameterError(f"deltas must be duplicate-free, got {deltas}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "deltas", deltas)


@dataclass
class ConsistencyRecord:
    """Per-object update-vs-propagate decision with its evidence."""

    object_index: int
    per_delta: Dict[int, bool]
    mean: float
    decision: str  # "update" | "propagate"


@dataclass
class SequenceTracks:
    """Identity-consistent per-object masks over a whole sequence.

    ``frames[t][i]`` is object i's mask at frame t; index i means the same
    object at every frame. ``layer_order[i]`` is object i's overlap rank
    (0 = frontmost), frozen from the frame-0 selection. ``records[t]`` holds
    the decision log for frame t (empty for frame 0 and non-temporal data).
    """

    num_objects: int
    frames: List[List[np.ndarray]]
    layer_order: Tuple[int, ...]
    records: List[List[ConsistencyRecord]] = field(default_factory=list)

    def __post_init__(self):
        for t, masks in enumerate(self.frames):
            if len(masks) != self.num_objects:
                raise ShapeError(f"frame {t} has {len(masks)} masks, expected {self.num_objects}")
        if len(self.layer_order) != self.num_objects:
            raise ShapeError("layer_order length must equal num_objects")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> Optional[Tuple[int, int]]:
        for masks in self.frames:
            for m in masks:
                return m.shape
        return None


def _empty_like(masks: Sequence[np.ndarray]) -> np.ndarray:
    return np.zeros_like(masks[0])


def threeway_hungarian(
    m1: Sequence[np.ndarray],
    m2: Sequence[np.ndarray],
    m3: Sequence[np.ndarray],
) -> Tuple[List[np.ndarray], List[bool]]:
    """Transitivity check over three mask lists.

    m3 is first aligned to m2 by max-IoU assignment; m1 is then matched
    against both the aligned m3 and m2. Entry i of the returned list is the
    m2 mask matched to m1's object i (an empty mask when unmatched) and the
    flag says whether the two matchings agree, i.e. whether transitivity
    holds for object i. Lists may differ in length; indices of m1 left
    unmatched get flag False.
    """
    lists = [list(m1), list(m2), list(m3)]
    shapes = {m.shape for ms in lists for m in ms}
    if len(shapes) > 1:
        raise ShapeError(f"all masks must share dimensions, got {sorted(shapes)}")
    l1, l2, l3 = lists
    if not l1:
        return [], []
    blank = _empty_like(l1)

    a23 = solve_assignment(iou_matrix(l2, l3))
    m3_aligned = [l3[a23.row_to_col[j]] if j in a23.row_to_col else blank for j in range(len(l2))]
    a13 = solve_assignment(iou_matrix(l1, m3_aligned))
    a12 = solve_assignment(iou_matrix(l1, l2))

    aligned: List[np.ndarray] = []
    flags: List[bool] = []
    for i in range(len(l1)):
        j12 = a12.row_to_col.get(i)
        j13 = a13.row_to_col.get(i)
        aligned.append(l2[j12] if j12 is not None else blank)
        flags.append(j12 is not None and j12 == j13)
    return aligned, flags


def _relayer(masks: Sequence[np.ndarray], layer_order: Sequence[int]) -> List[np.ndarray]:
    # Overlap removal in the tracks' frozen layer order; every object keeps a
    # slot (possibly empty) so identities stay aligned across frames.
    order = sorted(range(len(masks)), key=lambda i: layer_order[i])
    out: List[Optional[np.ndarray]] = [None] * len(masks)
    occupied = None
    for i in order:
        if occupied is None:
            occupied = np.zeros_like(masks[i])
        visible = masks[i] & ~occupied
        occupied |= visible
        out[i] = visible
    return [m for m in out if m is not None]


def temporal_consistency_step(
    prev: Sequence[np.ndarray],
    flow: Optional[FlowField],
    current: FrameMasks,
    neighbors: Mapping[int, FrameMasks],
    cfg: AssocConfig,
    layer_order: Optional[Sequence[int]] = None,
) -> Tuple[List[np.ndarray], List[ConsistencyRecord]]:
    """Advance every track by one frame.

    ``prev`` holds the sequence-level masks at t-1 (one per object), ``flow``
    the gap +1 field stored at t-1, ``current`` the frame-level predictions at
    t, and ``neighbors`` the flow-aligned frame-level predictions at t+delta.
    Each object independently takes its Hungarian-matched current mask when
    the averaged consistency reaches 0.5 and the warped previous mask
    otherwise; the result is re-layered in the tracks' layer order.
    """
    n = len(prev)
    if n == 0:
        return [], []
    if layer_order is None:
        layer_order = list(range(n))
    if flow is None and cfg.mode in (MODE_TEMPORAL, MODE_PROPAGATION):
        raise MissingInputError(f"optical flow required for {cfg.mode} association")

    warped = [warp_mask(m, flow) for m in prev] if flow is not None else [np.array(m) for m in prev]
    cur = current.masks()

    a12 = solve_assignment(iou_matrix(warped, cur))
    matched = [cur[a12.row_to_col[i]] if i in a12.row_to_col else np.zeros_like(warped[i]) for i in range(n)]

    records: List[ConsistencyRecord] = []
    chosen: List[np.ndarray] = []
    if cfg.mode == MODE_HUNGARIAN:
        for i in range(n):
            records.append(ConsistencyRecord(i, {}, 1.0, "update"))
            chosen.append(matched[i])
    elif cfg.mode == MODE_PROPAGATION:
        for i in range(n):
            records.append(ConsistencyRecord(i, {}, 0.0, "propagate"))
            chosen.append(warped[i])
    else:
        per_delta: Dict[int, List[bool]] = {}
        for delta in cfg.deltas:
            if delta not in neighbors:
                continue
            _, flags = threeway_hungarian(warped, cur, neighbors[delta].masks())
            per_delta[delta] = flags
        for i in range(n):
            votes = {d: flags[i] for d, flags in per_delta.items()}
            # No reachable neighbor at all: take the safe branch and propagate.
            mean = sum(votes.values()) / len(votes) if votes else 0.0
            update = mean >= 0.5
            records.append(ConsistencyRecord(i, votes, mean, "update" if update else "propagate"))
            chosen.append(matched[i] if update else warped[i])
    return _relayer(chosen, layer_order), records


def neighbor_align(pred_at: FrameMasks, flows: Sequence[FlowField]) -> FrameMasks:
    """Warp a neighboring frame's predictions into another frame's coordinates.

    ``flows`` is the chain of fields to apply in order; each field must start
    where the previous one landed. Scores are carried unchanged.
    """
    frame = pred_at.frame_index
    for f in flows:
        if f.source_frame != frame:
            raise ParameterError(
                f"flow chain broken: field starts at frame {f.source_frame}, expected {frame}"
            )
        frame = f.target_frame
    objects = []
    for sm in pred_at.objects:
        mask = sm.mask
        for f in flows:
            mask = warp_mask(mask, f)
        objects.append(ScoredMask(mask, sm.fiou, sm.mos, layer_rank=sm.layer_rank))
    return FrameMasks(frame, tuple(objects))


def _load_flow(seq_dir: Path, frame: int, gap: int, num_frames: int) -> Optional[FlowField]:
    fields, skipped = load_gap_flows(seq_dir, frame, [gap], num_frames)
    return fields[0] if fields else None


def associate_sequence(
    frames: Sequence[FrameMasks],
    seq_dir: Optional[Path],
    cfg: AssocConfig = AssocConfig(),
) -> SequenceTracks:
    """Turn frame-level predictions into identity-consistent tracks.

    Tracks are initialized from frame 0 (fixing the object count and layer
    order) and advanced one frame at a time. ``seq_dir`` must contain the
    standard ``flow/gap_<g>/`` layout for the temporal-consistency and
    propagation-only modes; hungarian-only runs without flow by matching the
    unwarped previous masks. Deltas whose neighbor frame falls outside the
    sequence are dropped from the consistency mean.
    """
    frames = list(frames)
    if not frames:
        raise ParameterError("associate_sequence needs at least one frame")
    indices = [fm.frame_index for fm in frames]
    if indices != list(range(len(frames))):
        raise ParameterError(f"frame indices must be contiguous from 0, got {indices}")
    num_frames = len(frames)
    init = frames[0]
    n = len(init.objects)
    if n == 0:
        log.warning("frame 0 has no predicted objects; emitting empty tracks")
        return SequenceTracks(0, [[] for _ in range(num_frames)], (), [[] for _ in range(num_frames)])

    layer_order = tuple(range(n))
    track_frames: List[List[np.ndarray]] = [[np.array(sm.mask) for sm in init.objects]]
    records: List[List[ConsistencyRecord]] = [[]]
    seq_dir = Path(seq_dir) if seq_dir is not None else None

    for t in range(1, num_frames):
        flow = None
        if seq_dir is not None:
            if cfg.mode == MODE_HUNGARIAN:
                try:
                    flow = _load_flow(seq_dir, t - 1, 1, num_frames)
                except MissingInputError:
                    flow = None
            else:
                flow = _load_flow(seq_dir, t - 1, 1, num_frames)
        elif cfg.mode in (MODE_TEMPORAL, MODE_PROPAGATION):
            raise MissingInputError(f"optical flow required for {cfg.mode} association")

        neighbors: Dict[int, FrameMasks] = {}
        if cfg.mode == MODE_TEMPORAL:
            for delta in cfg.deltas:
                source = t + delta
                if not 0 <= source < num_frames:
                    continue
                back = _load_flow(seq_dir, source, -delta, num_frames)
                if back is None:
                    raise MissingInputError(
                        f"missing gap {-delta} flow at frame {source} for delta {delta}"
                    )
                neighbors[delta] = neighbor_align(frames[source], [back])

        masks, recs = temporal_consistency_step(
            track_frames[-1], flow, frames[t], neighbors, cfg, layer_order
        )
        track_frames.append(masks)
        records.append(recs)

    return SequenceTracks(n, track_frames, layer_order, records)
