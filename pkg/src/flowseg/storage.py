"""Dataset-layout I/O: palette mask PNGs, candidate directories, flow files,
score/track sidecars, GT boxes, and report emission.

Layout per sequence (DAVIS-style, zero-padded 5-digit frame names)::

    <seq>/masks/<frame>.png            ground-truth palette masks (0=bg, 1..N)
    <seq>/candidates/<frame>/*.png     one binary PNG per candidate
    <seq>/candidates/<frame>/scores.json   {"cand.png": {"fiou": f, "mos": m|null}}
    <seq>/flow/gap_<g>/<frame>.flo     optical flow per (frame, gap)
    <seq>/boxes.csv                    "frame,x0,y0,x1,y1" GT boxes

Prediction outputs use the same palette-PNG format with ``scores.json`` /
``tracks.json`` sidecars; palette id i+1 is the i-th object, front first.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .association import ConsistencyRecord, SequenceTracks
from .core import BBox, FrameMasks, ScoredMask, as_mask
from .errors import FormatError, MissingInputError, ParameterError
from .flowio import FlowField, write_flo
from .selection import CandidateSet

__all__ = [
    "davis_palette",
    "frame_name",
    "load_boxes_csv",
    "load_candidates",
    "load_frame_masks_dir",
    "load_gt_tracks",
    "load_label_png",
    "save_boxes_csv",
    "save_flow_dir",
    "save_frame_masks_dir",
    "save_label_png",
    "save_rgb_png",
    "save_tracks_dir",
    "write_json",
    "write_report_csv",
    "write_report_json",
]


def frame_name(t: int) -> str:
    return f"{t:05d}"


def davis_palette() -> bytes:
    """The standard 256-color VOC/DAVIS palette as 768 bytes."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        label = i
        for bit in range(8):
            palette[i, 0] |= ((label >> 0) & 1) << (7 - bit)
            palette[i, 1] |= ((label >> 1) & 1) << (7 - bit)
            palette[i, 2] |= ((label >> 2) & 1) << (7 - bit)
            label >>= 3
    return palette.tobytes()


def save_label_png(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    img = Image.fromarray(labels, mode="P")
    img.putpalette(davis_palette())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def load_label_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing mask file {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("P") if img.mode != "P" else img, dtype=np.uint8)


def png_shape(path) -> Tuple[int, int]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing image file {path}")
    with Image.open(path) as img:
        return img.height, img.width


def save_binary_png(path, mask) -> None:
    m = as_mask(mask)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((m * np.uint8(255)), mode="L").save(path, format="PNG")


def load_binary_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing mask file {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8) != 0


def save_rgb_png(path, rgb: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def frame_masks_to_labels(fm: FrameMasks, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    shape = fm.shape or shape
    if shape is None:
        raise ParameterError("cannot rasterize an empty FrameMasks without a frame shape")
    labels = np.zeros(shape, dtype=np.uint8)
    if len(fm.objects) > 255:
        raise ParameterError("palette masks support at most 255 objects")
    # Paint back to front so the front object wins should overlaps sneak in.
    for idx in range(len(fm.objects) - 1, -1, -1):
        labels[fm.objects[idx].mask] = idx + 1
    return labels


def labels_to_masks(labels: np.ndarray, num_objects: Optional[int] = None) -> List[np.ndarray]:
    labels = np.asarray(labels)
    count = int(labels.max()) if num_objects is None else num_objects
    return [labels == (i + 1) for i in range(count)]


def write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing sidecar {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON in {path}: {e}") from e


def config_hash(payload) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# -- candidates -------------------------------------------------------------

def save_candidates(seq_dir, frame: int, candidates: Sequence[ScoredMask]) -> None:
    frame_dir = Path(seq_dir) / "candidates" / frame_name(frame)
    scores = {}
    for i, sm in enumerate(candidates):
        name = f"cand_{i:03d}.png"
        save_binary_png(frame_dir / name, sm.mask)
        scores[name] = {"fiou": sm.fiou, "mos": sm.mos}
    write_json(frame_dir / "scores.json", scores)


def load_candidates(seq_dir, frame: int, grid_spec: int = 10) -> CandidateSet:
    frame_dir = Path(seq_dir) / "candidates" / frame_name(frame)
    if not frame_dir.is_dir():
        raise MissingInputError(f"missing candidate directory {frame_dir}")
    scores = _read_json(frame_dir / "scores.json")
    candidates = []
    for name in sorted(scores):
        entry = scores[name]
        mask = load_binary_png(frame_dir / name)
        candidates.append(
            ScoredMask(mask, fiou=float(entry["fiou"]),
                       mos=None if entry.get("mos") is None else float(entry["mos"]),
                       layer_rank=len(candidates))
        )
    return CandidateSet(tuple(candidates), grid_spec=grid_spec)


def candidate_frames(seq_dir) -> List[int]:
    root = Path(seq_dir) / "candidates"
    if not root.is_dir():
        raise MissingInputError(f"missing candidate directory {root}")
    return sorted(int(p.name) for p in root.iterdir() if p.is_dir() and p.name.isdigit())


# -- frame-level predictions -------------------------------------------------

def save_frame_masks_dir(out_dir, frames: Sequence[FrameMasks], shape: Tuple[int, int]) -> None:
    out_dir = Path(out_dir)
    scores: Dict[str, list] = {}
    for fm in frames:
        save_label_png(out_dir / f"{frame_name(fm.frame_index)}.png", frame_masks_to_labels(fm, shape))
        scores[frame_name(fm.frame_index)] = [
            {"fiou": sm.fiou, "mos": sm.mos, "layer_rank": sm.layer_rank} for sm in fm.objects
        ]
    write_json(out_dir / "scores.json", scores)


def load_frame_masks_dir(pred_dir) -> List[FrameMasks]:
    pred_dir = Path(pred_dir)
    scores = _read_json(pred_dir / "scores.json")
    frames = []
    for name in sorted(scores):
        labels = load_label_png(pred_dir / f"{name}.png")
        masks = labels_to_masks(labels, num_objects=len(scores[name]))
        objects = tuple(
            ScoredMask(mask, fiou=float(e["fiou"]),
                       mos=None if e.get("mos") is None else float(e["mos"]),
                       layer_rank=int(e["layer_rank"]))
            for mask, e in zip(masks, scores[name])
        )
        frames.append(FrameMasks(int(name), objects))
    return frames


# -- ground truth and tracks --------------------------------------------------

def load_gt_tracks(seq_dir) -> SequenceTracks:
    """GT palette masks as tracks; palette id fixes object identity."""
    masks_dir = Path(seq_dir) / "masks"
    files = sorted(masks_dir.glob("*.png"))
    if not files:
        raise MissingInputError(f"no GT masks under {masks_dir}")
    label_maps = [load_label_png(p) for p in files]
    count = max(int(lm.max()) for lm in label_maps)
    frames = [labels_to_masks(lm, num_objects=count) for lm in label_maps]
    return SequenceTracks(count, frames, tuple(range(count)), [[] for _ in frames])


def save_gt_masks(seq_dir, tracks: SequenceTracks, shape: Tuple[int, int]) -> None:
    for t, masks in enumerate(tracks.frames):
        labels = np.zeros(shape, dtype=np.uint8)
        order = sorted(range(len(masks)), key=lambda i: tracks.layer_order[i], reverse=True)
        for i in order:
            labels[masks[i]] = i + 1
        save_label_png(Path(seq_dir) / "masks" / f"{frame_name(t)}.png", labels)


def _record_payload(rec: ConsistencyRecord) -> dict:
    return {
        "object": rec.object_index,
        "per_delta": {str(d): bool(v) for d, v in sorted(rec.per_delta.items())},
        "mean": rec.mean,
        "decision": rec.decision,
    }


def save_tracks_dir(out_dir, tracks: SequenceTracks, shape: Tuple[int, int],
                    extra: Optional[dict] = None) -> None:
    out_dir = Path(out_dir)
    for t, masks in enumerate(tracks.frames):
        labels = np.zeros(shape, dtype=np.uint8)
        order = sorted(range(len(masks)), key=lambda i: tracks.layer_order[i], reverse=True)
        for i in order:
            labels[masks[i]] = i + 1
        save_label_png(out_dir / f"{frame_name(t)}.png", labels)
    payload = {
        "num_objects": tracks.num_objects,
        "layer_order": list(tracks.layer_order),
        "decisions": {
            frame_name(t): [_record_payload(r) for r in recs]
            for t, recs in enumerate(tracks.records)
        },
    }
    if extra:
        payload.update(extra)
    write_json(out_dir / "tracks.json", payload)


def load_tracks_dir(track_dir) -> SequenceTracks:
    track_dir = Path(track_dir)
    meta = _read_json(track_dir / "tracks.json")
    count = int(meta["num_objects"])
    files = sorted(track_dir.glob("*.png"))
    frames = [labels_to_masks(load_label_png(p), num_objects=count) for p in files]
    return SequenceTracks(count, frames, tuple(meta["layer_order"]), [[] for _ in frames])


# -- flow ---------------------------------------------------------------------

def save_flow_dir(seq_dir, flows: Dict[Tuple[int, int], FlowField]) -> None:
    for (t, g), f in flows.items():
        path = Path(seq_dir) / "flow" / f"gap_{g}" / f"{frame_name(t)}.flo"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_flo(f))


# -- boxes ----------------------------------------------------------------------

def save_boxes_csv(path, boxes: Dict[int, BBox]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "x0", "y0", "x1", "y1"])
        for t in sorted(boxes):
            b = boxes[t]
            writer.writerow([t, b.x0, b.y0, b.x1, b.y1])


def load_boxes_csv(path) -> Dict[int, BBox]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing boxes file {path}")
    boxes: Dict[int, BBox] = {}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            boxes[int(row["frame"])] = BBox(int(row["x0"]), int(row["y0"]), int(row["x1"]), int(row["y1"]))
    return boxes


# -- reports --------------------------------------------------------------------

def write_report_json(path, report, extra: Optional[dict] = None) -> None:
    payload = {
        "protocol": report.protocol,
        "per_sequence": report.per_sequence,
        "aggregate": report.aggregate,
    }
    if report.sr is not None:
        payload["sr"] = {
            seq: {"per_threshold": {f"{tau:.2f}": v for tau, v in sr.per_threshold.items()},
                  "mean": sr.mean}
            for seq, sr in report.sr.items()
        }
    if extra:
        payload.update(extra)
    write_json(path, payload)


def write_report_csv(path, report) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "J", "F", "J&F"])
        for seq in sorted(report.per_sequence):
            row = report.per_sequence[seq]
            writer.writerow([seq, repr(row["J_mean"]), repr(row["F_mean"]), repr(row["JF_mean"])])
        agg = report.aggregate
        writer.writerow(["mean", repr(agg["J_mean"]), repr(agg["F_mean"]), repr(agg["JF_mean"])])
