"""Optical-flow file I/O, color-wheel visualization, multi-gap flow loading,
and flow-based forward mask warping.

A flow field stored for frame t with gap g describes motion from frame t to
frame t+g; displacements are in pixels, u along +x (right) and v along +y
(down). Files use the Middlebury ``.flo`` layout: float32 magic 202021.25,
int32 width, int32 height, then row-major interleaved (u, v) float32 pairs,
all little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import as_mask
from .errors import FormatError, LengthError, MissingInputError, ParameterError, ShapeError

__all__ = [
    "DEFAULT_GAPS",
    "SLOW_MOTION_GAPS",
    "FlowField",
    "FlowGapSet",
    "flow_to_rgb",
    "load_gap_flows",
    "make_color_wheel",
    "read_flo",
    "read_flo_file",
    "warp_mask",
    "write_flo",
    "write_flo_file",
]

FLO_MAGIC = np.float32(202021.25)

DEFAULT_GAPS = (1, -1, 2, -2)
SLOW_MOTION_GAPS = (3, -3, 6, -6)


@dataclass(frozen=True)
class FlowField:
    """Dense displacement field with frame-gap metadata.

    ``flow`` has shape (H, W, 2) float32 with channel 0 = u and channel 1 = v.
    """

    flow: np.ndarray
    gap: int = 1
    source_frame: int = 0

    def __post_init__(self):
        f = np.asarray(self.flow, dtype=np.float32)
        if f.ndim != 3 or f.shape[2] != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise ShapeError(f"flow must have shape (H, W, 2), got {f.shape}")
        if not np.isfinite(f).all():
            raise ParameterError("flow displacements must be finite")
        if self.gap == 0:
            raise ParameterError("frame gap must be nonzero")
        f = f.copy()
        f.setflags(write=False)
        object.__setattr__(self, "flow", f)

    @property
    def height(self) -> int:
        return self.flow.shape[0]

    @property
    def width(self) -> int:
        return self.flow.shape[1]

    @property
    def u(self) -> np.ndarray:
        return self.flow[:, :, 0]

    @property
    def v(self) -> np.ndarray:
        return self.flow[:, :, 1]

    @property
    def target_frame(self) -> int:
        return self.source_frame + self.gap


@dataclass(frozen=True)
class FlowGapSet:
    """Ordered, duplicate-free set of nonzero frame gaps."""

    gaps: Tuple[int, ...] = DEFAULT_GAPS

    def __post_init__(self):
        gaps = tuple(int(g) for g in self.gaps)
        if any(g == 0 for g in gaps):
            raise ParameterError("frame gaps must be nonzero")
        if len(set(gaps)) != len(gaps):
            raise ParameterError(f"frame gaps must be duplicate-free, got {gaps}")
        object.__setattr__(self, "gaps", gaps)

    def __iter__(self):
        return iter(self.gaps)

    def __len__(self) -> int:
        return len(self.gaps)


def read_flo(data: bytes, gap: int = 1, source_frame: int = 0) -> FlowField:
    """Decode ``.flo`` bytes. Gap and source frame are caller-side metadata."""
    if len(data) < 12:
        raise LengthError(f"flo stream too short for a header: {len(data)} bytes")
    magic = np.frombuffer(data, dtype="<f4", count=1)[0]
    if magic != FLO_MAGIC:
        raise FormatError(f"bad flo magic {magic!r}, expected {float(FLO_MAGIC)}")
    width, height = (int(x) for x in np.frombuffer(data, dtype="<i4", count=2, offset=4))
    if width < 1 or height < 1:
        raise FormatError(f"bad flo dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) != expected:
        raise LengthError(f"flo payload length {len(data)} != expected {expected} for {width}x{height}")
    values = np.frombuffer(data, dtype="<f4", offset=12)
    return FlowField(values.reshape(height, width, 2), gap=gap, source_frame=source_frame)


def write_flo(f: FlowField) -> bytes:
    header = struct.pack("<fii", float(FLO_MAGIC), f.width, f.height)
    return header + f.flow.astype("<f4", copy=False).tobytes()


def read_flo_file(path, gap: int = 1, source_frame: int = 0) -> FlowField:
    return read_flo(Path(path).read_bytes(), gap=gap, source_frame=source_frame)


def write_flo_file(path, f: FlowField) -> None:
    Path(path).write_bytes(write_flo(f))


def make_color_wheel() -> np.ndarray:
    """The 55-entry Middlebury color wheel as a (55, 3) array of 0..255 floats.

    Segment lengths: RY=15, YG=6, GC=4, CB=11, BM=13, MR=6.
    """
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[col:col + RY, 0] = 255
    wheel[col:col + RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    wheel[col:col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col:col + YG, 1] = 255
    col += YG
    wheel[col:col + GC, 1] = 255
    wheel[col:col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    wheel[col:col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col:col + CB, 2] = 255
    col += CB
    wheel[col:col + BM, 2] = 255
    wheel[col:col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    wheel[col:col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col:col + MR, 0] = 255
    return wheel


def flow_to_rgb(f: FlowField, max_radius: Optional[float] = None) -> np.ndarray:
    """Color-wheel rendering of a flow field as an (H, W, 3) uint8 RGB image.

    Hue encodes direction (atan2(-v, -u) over the Middlebury wheel) and
    saturation encodes magnitude. With ``max_radius=None`` magnitudes are
    normalized by the per-frame maximum; pass a positive radius for fixed
    normalization comparable across frames. Zero flow renders white.
    """
    u = f.u.astype(np.float64)
    v = f.v.astype(np.float64)
    rad = np.sqrt(u * u + v * v)
    if max_radius is None:
        scale = rad.max()
    else:
        if max_radius <= 0:
            raise ParameterError(f"fixed normalizer must be positive, got {max_radius}")
        scale = float(max_radius)
    if scale > 0:
        u = u / scale
        v = v / scale
        rad = rad / scale

    wheel = make_color_wheel()
    ncols = wheel.shape[0]
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = k0 + 1
    k1[k1 == ncols] = 0
    frac = fk - k0

    out = np.empty(u.shape + (3,), dtype=np.uint8)
    in_range = rad <= 1
    for ch in range(3):
        col0 = wheel[k0, ch] / 255.0
        col1 = wheel[k1, ch] / 255.0
        col = (1.0 - frac) * col0 + frac * col1
        col[in_range] = 1.0 - rad[in_range] * (1.0 - col[in_range])
        col[~in_range] *= 0.75
        out[:, :, ch] = np.floor(255.0 * col).astype(np.uint8)
    return out


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # Fixed round-half-away-from-zero so splat targets are platform-independent.
    return np.trunc(x + np.copysign(0.5, x)).astype(np.int64)


def warp_mask(m, f: FlowField) -> np.ndarray:
    """Forward nearest-neighbor splat of a mask along a flow field.

    Every set pixel p lands on round(p + (u(p), v(p))); targets outside the
    frame are dropped. No hole filling. For sequence propagation the field is
    the gap +1 flow stored at the previous frame.
    """
    mask = as_mask(m)
    if mask.shape != (f.height, f.width):
        raise ShapeError(f"mask shape {mask.shape} != flow shape {(f.height, f.width)}")
    out = np.zeros_like(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return out
    tx = _round_half_away(xs + f.flow[ys, xs, 0].astype(np.float64))
    ty = _round_half_away(ys + f.flow[ys, xs, 1].astype(np.float64))
    keep = (tx >= 0) & (tx < f.width) & (ty >= 0) & (ty < f.height)
    out[ty[keep], tx[keep]] = True
    return out


def flow_path(seq_dir, frame: int, gap: int) -> Path:
    return Path(seq_dir) / "flow" / f"gap_{gap}" / f"{frame:05d}.flo"


def load_gap_flows(
    seq_dir,
    frame: int,
    gaps: Sequence[int] | FlowGapSet,
    num_frames: int,
) -> Tuple[List[FlowField], List[int]]:
    """Load the flow fields stored at ``frame`` for each requested gap.

    Returns (fields, skipped_gaps). Gaps whose target frame t+g falls outside
    [0, num_frames) are skipped and reported; an in-range gap whose file is
    missing or unreadable raises MissingInputError naming the path.
    """
    seq_dir = Path(seq_dir)
    fields: List[FlowField] = []
    skipped: List[int] = []
    for g in gaps:
        if not 0 <= frame + g < num_frames:
            skipped.append(g)
            continue
        path = flow_path(seq_dir, frame, g)
        if not path.is_file():
            raise MissingInputError(f"missing flow file {path}")
        try:
            fields.append(read_flo(path.read_bytes(), gap=g, source_frame=frame))
        except FormatError as e:
            raise MissingInputError(f"unreadable flow file {path}: {e}") from e
    return fields, skipped
