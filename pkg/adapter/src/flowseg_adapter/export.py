"""Export raw predictor outputs into the flowseg on-disk interchange formats.

A "video" is a directory of image frames, sorted by filename. Exports write:

    <out>/candidates/<frame:05d>/cand_###.png + scores.json
    <out>/flow/gap_<g>/<frame:05d>.flo
    <out>/manifest.json

These match the consumer's documented layouts byte for byte; nothing here
imports the consumer package.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .models import FlowEstimator, Segmenter

FORMAT_VERSION = 1
FLO_MAGIC = 202021.25


class VideoError(RuntimeError):
    pass


@dataclass
class ExportManifest:
    segmenter: str = ""
    segmenter_checkpoint: str = ""
    flow_estimator: str = ""
    flow_estimator_checkpoint: str = ""
    grid_side: int = 0
    threshold: float = 0.0
    gaps: List[int] = field(default_factory=list)
    skipped_boundary: List[Tuple[int, int]] = field(default_factory=list)
    candidate_counts: Dict[str, int] = field(default_factory=dict)
    files: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    format_version: int = FORMAT_VERSION


def write_manifest(out_dir, manifest: ExportManifest) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = asdict(manifest)
    payload["skipped_boundary"] = [list(x) for x in manifest.skipped_boundary]
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_video_frames(video_dir) -> List[np.ndarray]:
    video_dir = Path(video_dir)
    if not video_dir.is_dir():
        raise VideoError(f"video directory {video_dir} does not exist")
    paths = sorted(p for p in video_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not paths:
        raise VideoError(f"no image frames under {video_dir}")
    frames = []
    for p in paths:
        try:
            with Image.open(p) as img:
                frames.append(np.asarray(img.convert("RGB")))
        except (UnidentifiedImageError, OSError) as e:
            raise VideoError(f"cannot decode frame {p}: {e}") from e
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise VideoError(f"frames disagree on size: {sorted(shapes)}")
    return frames


def grid_points(height: int, width: int, side: int) -> List[Tuple[int, int]]:
    xs = [int((i + 0.5) * width / side) for i in range(side)]
    ys = [int((j + 0.5) * height / side) for j in range(side)]
    return [(x, y) for x in xs for y in ys]


def export_candidates(
    video_dir,
    model: Segmenter,
    grid_side: int,
    out_dir,
    threshold: float = 0.5,
) -> ExportManifest:
    """Run the segmenter on every grid prompt of every frame and export the
    binarized masks plus a scores sidecar per frame.

    Duplicate masks from nearby prompts are dropped; what survives is raw
    candidate data, so any further selection (NMS, top-n) stays downstream.
    """
    frames = load_video_frames(video_dir)
    out_dir = Path(out_dir)
    manifest = ExportManifest(
        segmenter=model.name,
        segmenter_checkpoint=model.checkpoint,
        grid_side=grid_side,
        threshold=threshold,
        notes=[f"binarization threshold {threshold} applied before export"],
    )
    h, w = frames[0].shape[:2]
    points = grid_points(h, w, grid_side)
    for t, frame in enumerate(frames):
        frame_dir = out_dir / "candidates" / f"{t:05d}"
        frame_dir.mkdir(parents=True, exist_ok=True)
        scores = {}
        seen = set()
        index = 0
        for point in points:
            prob, fiou, mos = model.predict(frame, point)
            mask = prob >= threshold
            if not mask.any():
                continue
            key = mask.tobytes()
            if key in seen:
                continue
            seen.add(key)
            name = f"cand_{index:03d}.png"
            Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(frame_dir / name)
            scores[name] = {"fiou": round(min(max(fiou, 0.0), 1.0), 6),
                            "mos": round(min(max(mos, 0.0), 1.0), 6)}
            manifest.files.append(str((frame_dir / name).relative_to(out_dir)))
            index += 1
        (frame_dir / "scores.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n")
        manifest.files.append(str((frame_dir / "scores.json").relative_to(out_dir)))
        manifest.candidate_counts[f"{t:05d}"] = index
    write_manifest(out_dir, manifest)
    return manifest


def write_flo_bytes(flow: np.ndarray) -> bytes:
    h, w = flow.shape[:2]
    return struct.pack("<fii", FLO_MAGIC, w, h) + flow.astype("<f4", copy=False).tobytes()


def export_flows(
    video_dir,
    estimator: FlowEstimator,
    gaps: Sequence[int],
    out_dir,
) -> ExportManifest:
    """Estimate flow for every (frame, gap) whose target stays inside the clip
    and export Middlebury .flo files; boundary pairs are skipped and noted.
    """
    frames = load_video_frames(video_dir)
    out_dir = Path(out_dir)
    manifest = ExportManifest(
        flow_estimator=estimator.name,
        flow_estimator_checkpoint=estimator.checkpoint,
        gaps=[int(g) for g in gaps],
    )
    num = len(frames)
    for g in manifest.gaps:
        for t in range(num):
            if not 0 <= t + g < num:
                manifest.skipped_boundary.append((t, g))
                continue
            flow = estimator.estimate(frames[t], frames[t + g])
            path = out_dir / "flow" / f"gap_{g}" / f"{t:05d}.flo"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(write_flo_bytes(flow))
            manifest.files.append(str(path.relative_to(out_dir)))
    if manifest.skipped_boundary:
        manifest.notes.append(
            f"{len(manifest.skipped_boundary)} boundary (frame, gap) pairs skipped"
        )
    write_manifest(out_dir, manifest)
    return manifest
