"""Deterministic synthetic multi-object sequences: rasterized moving shapes
with exact ground-truth optical flow and controllable prediction corruption.

Velocities and positions are integers so forward-splat warping reproduces the
next frame exactly; everything is a pure function of the scene seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .association import SequenceTracks
from .core import FrameMasks, ScoredMask, iou, tight_bbox
from .errors import ParameterError
from .flowio import DEFAULT_GAPS, FlowField

__all__ = [
    "CorruptionSpec",
    "ObjectSpec",
    "SceneSpec",
    "benchmark_scenes",
    "corrupt",
    "emit_scene",
    "full_shapes",
    "identity_scene",
    "render",
]


@dataclass(frozen=True)
class ObjectSpec:
    """One moving shape: geometry, integer velocity, and depth (0 = front)."""

    shape: str  # "rect" | "ellipse"
    size: Tuple[int, int]  # (height, width)
    velocity: Tuple[int, int]  # (vx, vy) pixels/frame
    depth: int
    position: Optional[Tuple[int, int]] = None  # (x, y) top-left at t=0; None = seeded

    def __post_init__(self):
        if self.shape not in ("rect", "ellipse"):
            raise ParameterError(f"shape must be 'rect' or 'ellipse', got {self.shape!r}")
        if min(self.size) < 1:
            raise ParameterError(f"object size must be positive, got {self.size}")
        if any(v != int(v) for v in self.velocity):
            raise ParameterError(f"velocities must be integer-valued, got {self.velocity}")


@dataclass(frozen=True)
class CorruptionSpec:
    id_permute_prob: float = 0.0
    dropout_prob: float = 0.0
    jitter_px: int = 0

    def __post_init__(self):
        if not (0.0 <= self.id_permute_prob <= 1.0 and 0.0 <= self.dropout_prob <= 1.0):
            raise ParameterError("corruption probabilities must lie in [0, 1]")
        if self.jitter_px < 0:
            raise ParameterError("jitter_px must be nonnegative")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    frame_size: Tuple[int, int]  # (height, width)
    num_frames: int
    objects: Tuple[ObjectSpec, ...]
    background_velocity: Tuple[int, int] = (0, 0)
    corruption: CorruptionSpec = CorruptionSpec()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.num_frames < 1:
            raise ParameterError("num_frames must be positive")
        if min(self.frame_size) < 1:
            raise ParameterError("frame_size must be positive")
        if any(v != int(v) for v in self.background_velocity):
            raise ParameterError("background velocity must be integer-valued")
        depths = [o.depth for o in self.objects]
        if len(set(depths)) != len(depths):
            raise ParameterError(f"object depths must be unique, got {depths}")


def _resolve_positions(spec: SceneSpec) -> List[Tuple[int, int]]:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.frame_size
    positions: List[Tuple[int, int]] = []
    for obj in spec.objects:
        oh, ow = obj.size
        if oh > h or ow > w:
            raise ParameterError(f"object of size {obj.size} cannot fit in frame {spec.frame_size}")
        if obj.position is None:
            positions.append((int(rng.integers(0, w - ow + 1)), int(rng.integers(0, h - oh + 1))))
        else:
            x, y = int(obj.position[0]), int(obj.position[1])
            if not (0 <= x <= w - ow and 0 <= y <= h - oh):
                raise ParameterError(f"object at {obj.position} does not fit in frame at t=0")
            positions.append((x, y))
    return positions


def _raster(obj: ObjectSpec, pos: Tuple[int, int], frame_size: Tuple[int, int]) -> np.ndarray:
    """Shape mask at an arbitrary (possibly off-frame) position, clipped."""
    h, w = frame_size
    oh, ow = obj.size
    x0, y0 = pos
    mask = np.zeros((h, w), dtype=bool)
    if obj.shape == "rect":
        xs0, ys0 = max(x0, 0), max(y0, 0)
        xs1, ys1 = min(x0 + ow, w), min(y0 + oh, h)
        if xs0 < xs1 and ys0 < ys1:
            mask[ys0:ys1, xs0:xs1] = True
        return mask
    yy, xx = np.ogrid[0:h, 0:w]
    cy = y0 + (oh - 1) / 2.0
    cx = x0 + (ow - 1) / 2.0
    ry = oh / 2.0
    rx = ow / 2.0
    mask[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = True
    return mask


def full_shapes(spec: SceneSpec, t: int) -> List[np.ndarray]:
    """Unoccluded object masks at frame t (the occlusion oracle for tests)."""
    positions = _resolve_positions(spec)
    out = []
    for obj, (x, y) in zip(spec.objects, positions):
        vx, vy = obj.velocity
        out.append(_raster(obj, (x + vx * t, y + vy * t), spec.frame_size))
    return out


def render(
    spec: SceneSpec, gaps: Sequence[int] = DEFAULT_GAPS
) -> Tuple[SequenceTracks, Dict[Tuple[int, int], FlowField]]:
    """Ground-truth tracks plus exact flow fields for every (frame, gap).

    Occlusion follows depth order (lower depth in front). Object pixels carry
    their object's velocity times the gap; everything else, including pixels
    an object just revealed, carries the background velocity. Objects that
    leave the frame are clipped with a warning.
    """
    h, w = spec.frame_size
    n = len(spec.objects)
    positions = _resolve_positions(spec)
    vxs = np.array([o.velocity[0] for o in spec.objects], dtype=np.float32)
    vys = np.array([o.velocity[1] for o in spec.objects], dtype=np.float32)
    front_first = sorted(range(n), key=lambda i: spec.objects[i].depth)
    layer_order = tuple(front_first.index(i) for i in range(n))

    frames: List[List[np.ndarray]] = []
    escaped = set()
    for t in range(spec.num_frames):
        fulls = []
        for i, (obj, (x, y)) in enumerate(zip(spec.objects, positions)):
            vx, vy = obj.velocity
            px, py = x + vx * t, y + vy * t
            full = _raster(obj, (px, py), spec.frame_size)
            oh, ow = obj.size
            if i not in escaped and (px < 0 or py < 0 or px + ow > w or py + oh > h):
                escaped.add(i)
                warnings.warn(f"object {i} leaves the frame at t={t}; clipping", stacklevel=2)
            fulls.append(full)
        occupied = np.zeros((h, w), dtype=bool)
        visible = [np.zeros((h, w), dtype=bool)] * n
        for i in front_first:
            vis = fulls[i] & ~occupied
            occupied |= vis
            visible[i] = vis
        frames.append(visible)

    flows: Dict[Tuple[int, int], FlowField] = {}
    bvx, bvy = spec.background_velocity
    for t in range(spec.num_frames):
        for g in gaps:
            if not 0 <= t + g < spec.num_frames:
                continue
            flow = np.empty((h, w, 2), dtype=np.float32)
            flow[:, :, 0] = bvx * g
            flow[:, :, 1] = bvy * g
            for i in range(n):
                vis = frames[t][i]
                flow[vis, 0] = vxs[i] * g
                flow[vis, 1] = vys[i] * g
            flows[(t, g)] = FlowField(flow, gap=g, source_frame=t)

    tracks = SequenceTracks(n, frames, layer_order, [[] for _ in range(spec.num_frames)])
    return tracks, flows


def corrupt(
    gt: SequenceTracks, corruption: CorruptionSpec, seed: int
) -> Tuple[List[FrameMasks], List[dict]]:
    """Detector-failure simulation over GT tracks.

    Per frame, independently: shuffle object identities with the given
    probability, drop each object with the given probability, and jitter each
    mask by up to jitter_px pixels per axis. Masks are re-layered in list
    order and scored with their fIoU against the uncorrupted GT object, so
    selection downstream behaves as it would on real detections. Returns the
    corrupted frames plus a per-frame log of what was done.
    """
    rng = np.random.default_rng(seed)
    frames: List[FrameMasks] = []
    logs: List[dict] = []
    n = gt.num_objects
    for t, masks in enumerate(gt.frames):
        order = list(range(n))
        permuted = False
        if n > 1 and rng.random() < corruption.id_permute_prob:
            rng.shuffle(order)
            permuted = True
        entry_log = {"frame": t, "order": list(order), "permuted": permuted, "dropped": [], "jitter": {}}
        occupied: Optional[np.ndarray] = None
        objects: List[ScoredMask] = []
        for obj_idx in order:
            if rng.random() < corruption.dropout_prob:
                entry_log["dropped"].append(obj_idx)
                continue
            mask = np.asarray(masks[obj_idx])
            dx = dy = 0
            if corruption.jitter_px > 0:
                dx = int(rng.integers(-corruption.jitter_px, corruption.jitter_px + 1))
                dy = int(rng.integers(-corruption.jitter_px, corruption.jitter_px + 1))
                mask = _shift(mask, dx, dy)
            entry_log["jitter"][str(obj_idx)] = [dx, dy]
            if occupied is None:
                occupied = np.zeros_like(mask)
            vis = mask & ~occupied
            occupied |= vis
            if vis.any():
                objects.append(
                    ScoredMask(vis, fiou=iou(vis, masks[obj_idx]), mos=None, layer_rank=len(objects))
                )
        frames.append(FrameMasks(t, tuple(objects)))
        logs.append(entry_log)
    return frames, logs


def _shift(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    ys = ys + dy
    xs = xs + dx
    keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    out[ys[keep], xs[keep]] = True
    return out


def emit_scene(spec: SceneSpec, seq_dir, gaps: Sequence[int] = DEFAULT_GAPS) -> None:
    """Write one scene in the standard dataset layout.

    Emits GT palette masks, per-(frame, gap) .flo files, GT union boxes,
    corrupted candidate masks with synthesized scores, and the corruption log.
    """
    from . import storage  # local import: storage depends on other modules here

    tracks, flows = render(spec, gaps)
    frames, logs = corrupt(tracks, spec.corruption, spec.seed)
    storage.save_gt_masks(seq_dir, tracks, spec.frame_size)
    storage.save_flow_dir(seq_dir, flows)
    boxes = {}
    for t, masks in enumerate(tracks.frames):
        union = np.zeros(spec.frame_size, dtype=bool)
        for m in masks:
            union |= m
        if union.any():
            boxes[t] = tight_bbox(union)
    storage.save_boxes_csv(Path(seq_dir) / "boxes.csv", boxes)
    for fm in frames:
        storage.save_candidates(seq_dir, fm.frame_index, fm.objects)
    storage.write_json(Path(seq_dir) / "corruption_log.json", logs)


def identity_scene(seed: int = 7, num_frames: int = 20) -> SceneSpec:
    """Four disjoint movers on a 64x96 frame; used for identity-recovery tests."""
    return SceneSpec(
        seed=seed,
        frame_size=(64, 96),
        num_frames=num_frames,
        objects=(
            ObjectSpec("rect", (10, 12), (2, 0), depth=0, position=(2, 4)),
            ObjectSpec("ellipse", (12, 10), (-1, 0), depth=1, position=(80, 6)),
            ObjectSpec("rect", (8, 8), (1, 1), depth=2, position=(10, 30)),
            ObjectSpec("ellipse", (10, 14), (0, -1), depth=3, position=(60, 48)),
        ),
        corruption=CorruptionSpec(id_permute_prob=1.0),
    )


def benchmark_scenes() -> List[Tuple[str, SceneSpec]]:
    """The shipped corrupted benchmark, fixed seeds.

    Each scene has a static front bar that movers pass behind: propagation
    can never resurrect the occluded pixels, while update-based tracking
    re-detects them. Identity shuffles stress the matching, dropouts punish
    matching-only tracking, and jitter keeps every detection imperfect.
    """
    corruption = CorruptionSpec(id_permute_prob=0.6, dropout_prob=0.08, jitter_px=1)
    scenes = [
        (
            "occl_a",
            SceneSpec(
                seed=51,
                frame_size=(64, 128),
                num_frames=30,
                objects=(
                    ObjectSpec("rect", (38, 18), (0, 0), depth=0, position=(35, 13)),
                    ObjectSpec("rect", (12, 12), (3, 0), depth=1, position=(0, 16)),
                    ObjectSpec("ellipse", (12, 14), (-3, 0), depth=2, position=(104, 36)),
                    ObjectSpec("rect", (10, 10), (2, 0), depth=3, position=(4, 52)),
                ),
                corruption=corruption,
            ),
        ),
        (
            "occl_b",
            SceneSpec(
                seed=33,
                frame_size=(64, 128),
                num_frames=30,
                objects=(
                    ObjectSpec("rect", (40, 16), (0, 0), depth=0, position=(60, 10)),
                    ObjectSpec("rect", (10, 12), (3, 0), depth=1, position=(12, 14)),
                    ObjectSpec("ellipse", (12, 14), (-3, 0), depth=2, position=(114, 34)),
                    ObjectSpec("ellipse", (10, 12), (2, 0), depth=3, position=(6, 52)),
                ),
                background_velocity=(1, 0),
                corruption=corruption,
            ),
        ),
        (
            "occl_c",
            SceneSpec(
                seed=54,
                frame_size=(64, 112),
                num_frames=28,
                objects=(
                    ObjectSpec("rect", (36, 16), (0, 0), depth=0, position=(48, 14)),
                    ObjectSpec("ellipse", (12, 12), (3, 0), depth=1, position=(0, 18)),
                    ObjectSpec("rect", (12, 12), (-2, 0), depth=2, position=(96, 34)),
                    ObjectSpec("rect", (10, 10), (-2, 0), depth=3, position=(98, 52)),
                ),
                corruption=corruption,
            ),
        ),
    ]
    return scenes
