"""Batch command-line interface.

Every command takes ``--config <yaml>`` plus flag overrides and works on the
dataset layout documented in :mod:`flowseg.storage`. Exit codes: 0 ok,
1 usage error, 2 missing or invalid input, 3 internal invariant violation.
``FLOWSEG_LOG`` selects the log level (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import association, evaluation, selection, storage, synth
from .association import AssocConfig, associate_sequence
from .errors import (
    EmptyMaskError,
    FlowsegError,
    FormatError,
    MissingInputError,
    ParameterError,
    ShapeError,
)
from .evaluation import LossWeights, evaluate_sequence, loss_flowi, loss_flowp, moca_sr
from .flowio import DEFAULT_GAPS, FlowGapSet, flow_to_rgb, read_flo_file
from .selection import SelectionConfig, select_frame

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3

_INPUT_ERRORS = (
    MissingInputError,
    FormatError,
    ParameterError,
    ShapeError,
    EmptyMaskError,
    FileNotFoundError,
    KeyError,
)


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved configuration for the batch commands.

    Defaults mirror the reference setup: gaps (1,-1,2,-2), NMS threshold 0.5,
    top-n 5, association deltas (1,2,-1,-2), sequence protocol.
    """

    dataset_root: str = "."
    output_dir: str = "out"
    sequences: Optional[Tuple[str, ...]] = None
    workers: int = 1
    gaps: Tuple[int, ...] = DEFAULT_GAPS
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    protocol: str = "sequence"

    def __post_init__(self):
        if self.workers < 1:
            raise ParameterError(f"workers must be positive, got {self.workers}")
        FlowGapSet(self.gaps)
        if self.protocol not in evaluation.PROTOCOLS:
            raise ParameterError(f"protocol must be one of {evaluation.PROTOCOLS}")

    def to_payload(self) -> dict:
        payload = asdict(self)
        payload["sequences"] = list(self.sequences) if self.sequences else None
        payload["gaps"] = list(self.gaps)
        payload["selection"] = asdict(self.selection)
        payload["assoc"] = asdict(self.assoc)
        payload["assoc"]["deltas"] = list(self.assoc.deltas)
        return payload

    @property
    def hash(self) -> str:
        # Only the knobs that shape the computation: paths and worker counts
        # must not change the outputs, so they stay out of the hash.
        payload = self.to_payload()
        return storage.config_hash({
            k: payload[k] for k in ("gaps", "selection", "assoc", "protocol")
        })


def load_config(path: Optional[str], overrides: dict) -> PipelineConfig:
    raw: dict = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise MissingInputError(f"missing config file {p}")
        loaded = yaml.safe_load(p.read_text())
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise FormatError(f"config {p} must hold a mapping")
            raw = loaded
    raw.update({k: v for k, v in overrides.items() if v is not None})
    sel = dict(raw.get("selection") or {})
    for key in ("nms_iou_threshold", "top_n", "score_mode", "min_score"):
        if raw.get(f"selection_{key}") is not None:
            sel[key] = raw.pop(f"selection_{key}")
        raw.pop(f"selection_{key}", None)
    assoc_raw = dict(raw.get("assoc") or {})
    for key in ("deltas", "mode"):
        if raw.get(f"assoc_{key}") is not None:
            assoc_raw[key] = raw.pop(f"assoc_{key}")
        raw.pop(f"assoc_{key}", None)
    if "deltas" in assoc_raw:
        assoc_raw["deltas"] = tuple(assoc_raw["deltas"])
    try:
        kwargs = {
            "dataset_root": raw.get("dataset_root", "."),
            "output_dir": raw.get("output_dir", "out"),
            "sequences": tuple(raw["sequences"]) if raw.get("sequences") else None,
            "workers": int(raw.get("workers", 1)),
            "gaps": tuple(raw.get("gaps", DEFAULT_GAPS)),
            "selection": SelectionConfig(**sel),
            "assoc": AssocConfig(**assoc_raw),
            "protocol": raw.get("protocol", "sequence"),
        }
        return PipelineConfig(**kwargs)
    except TypeError as e:
        raise ParameterError(f"invalid config: {e}") from e


def discover_sequences(root: Path, configured: Optional[Sequence[str]]) -> List[str]:
    if configured:
        return sorted(configured)
    if not root.is_dir():
        raise MissingInputError(f"dataset root {root} does not exist")
    seqs = sorted(
        p.name for p in root.iterdir()
        if p.is_dir() and ((p / "candidates").is_dir() or (p / "masks").is_dir())
    )
    if not seqs:
        raise MissingInputError(f"no sequences found under {root}")
    return seqs


def _run_sequences(fn, seqs: List[str], workers: int) -> Dict[str, Optional[str]]:
    """Run a per-sequence task, sequentially or in a process pool.

    Returns {seq: error string or None}; merge order is sorted, so results do
    not depend on the worker count.
    """
    errors: Dict[str, Optional[str]] = {}
    if workers <= 1 or len(seqs) <= 1:
        results = [fn(s) for s in seqs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, seqs))
    for seq, err in results:
        errors[seq] = err
    return dict(sorted(errors.items()))


def _guarded(task, seq: str) -> Tuple[str, Optional[str]]:
    try:
        task(seq)
        return seq, None
    except _INPUT_ERRORS as e:
        return seq, f"{type(e).__name__}: {e}"


def _finish_batch(out_dir: Path, errors: Dict[str, Optional[str]]) -> int:
    failed = {s: e for s, e in errors.items() if e}
    if failed:
        storage.write_json(out_dir / "errors.json", failed)
        for seq, err in failed.items():
            log.error("sequence %s failed: %s", seq, err)
        return EXIT_INPUT
    return EXIT_OK


# -- select -------------------------------------------------------------------


def _select_one(root: str, out_dir: str, cfg_payload: dict, seq: str) -> Tuple[str, Optional[str]]:
    cfg = SelectionConfig(**cfg_payload)

    def task(seq: str) -> None:
        seq_dir = Path(root) / seq
        frames = storage.candidate_frames(seq_dir)
        if not frames:
            raise MissingInputError(f"no candidate frames under {seq_dir / 'candidates'}")
        selected = []
        shape = None
        for t in frames:
            cand = storage.load_candidates(seq_dir, t)
            if cand.candidates:
                shape = cand.candidates[0].mask.shape
            selected.append(select_frame(cand, cfg, frame_index=t))
        if shape is None:
            raise MissingInputError(f"no candidate masks found under {seq_dir / 'candidates'}")
        storage.save_frame_masks_dir(Path(out_dir) / seq, selected, shape)

    return _guarded(task, seq)


def cmd_select(cfg: PipelineConfig) -> int:
    root = Path(cfg.dataset_root)
    out_dir = Path(cfg.output_dir)
    seqs = discover_sequences(root, cfg.sequences)
    fn = partial(_select_one, str(root), str(out_dir), asdict(cfg.selection))
    return _finish_batch(out_dir, _run_sequences(fn, seqs, cfg.workers))


# -- associate ------------------------------------------------------------------


def _associate_one(root: str, pred_root: str, out_dir: str, assoc_payload: dict,
                   cfg_hash: str, seq: str) -> Tuple[str, Optional[str]]:
    cfg = AssocConfig(deltas=tuple(assoc_payload["deltas"]), mode=assoc_payload["mode"])

    def task(seq: str) -> None:
        pred_dir = Path(pred_root) / seq
        frames = storage.load_frame_masks_dir(pred_dir)
        if not frames:
            raise MissingInputError(f"no frame predictions under {pred_dir}")
        shape = storage.png_shape(sorted(pred_dir.glob("*.png"))[0])
        tracks = associate_sequence(frames, Path(root) / seq, cfg)
        storage.save_tracks_dir(Path(out_dir) / seq, tracks, shape, extra={"config_hash": cfg_hash})

    return _guarded(task, seq)


def cmd_associate(cfg: PipelineConfig, pred_root: Optional[str]) -> int:
    root = Path(cfg.dataset_root)
    out_dir = Path(cfg.output_dir)
    pred = pred_root or str(Path(cfg.output_dir).parent / "frames")
    seqs = cfg.sequences and sorted(cfg.sequences) or sorted(
        p.name for p in Path(pred).iterdir() if p.is_dir()
    )
    if not seqs:
        raise MissingInputError(f"no prediction sequences under {pred}")
    payload = {"deltas": list(cfg.assoc.deltas), "mode": cfg.assoc.mode}
    fn = partial(_associate_one, str(root), pred, str(out_dir), payload, cfg.hash)
    return _finish_batch(out_dir, _run_sequences(fn, seqs, cfg.workers))


# -- combine --------------------------------------------------------------------


def _combine_one(front_root: str, back_root: str, out_dir: str, seq: str) -> Tuple[str, Optional[str]]:
    def task(seq: str) -> None:
        front = storage.load_frame_masks_dir(Path(front_root) / seq)
        back = storage.load_frame_masks_dir(Path(back_root) / seq)
        by_index = {fm.frame_index: fm for fm in back}
        shape = storage.png_shape(sorted((Path(front_root) / seq).glob("*.png"))[0])
        combined = []
        for fm in front:
            other = by_index.get(fm.frame_index)
            if other is None:
                combined.append(fm)
            else:
                combined.append(selection.combine_predictions(fm, other))
        storage.save_frame_masks_dir(Path(out_dir) / seq, combined, shape)

    return _guarded(task, seq)


def cmd_combine(cfg: PipelineConfig, front_root: str, back_root: str) -> int:
    out_dir = Path(cfg.output_dir)
    seqs = cfg.sequences and sorted(cfg.sequences) or sorted(
        p.name for p in Path(front_root).iterdir() if p.is_dir()
    )
    fn = partial(_combine_one, front_root, back_root, str(out_dir))
    return _finish_batch(out_dir, _run_sequences(fn, seqs, cfg.workers))


# -- eval -----------------------------------------------------------------------


def _eval_one(root: str, pred_root: str, protocol: str, seq: str):
    def task(seq: str):
        seq_dir = Path(root) / seq
        pred_dir = Path(pred_root) / seq
        if (pred_dir / "tracks.json").is_file():
            pred = storage.load_tracks_dir(pred_dir)
        elif (pred_dir / "scores.json").is_file():
            pred = storage.load_frame_masks_dir(pred_dir)
        else:
            raise MissingInputError(f"no predictions (tracks.json or scores.json) under {pred_dir}")
        gt = storage.load_gt_tracks(seq_dir)
        scores = evaluate_sequence(pred, gt, protocol)
        sr_payload = None
        boxes_path = seq_dir / "boxes.csv"
        if boxes_path.is_file():
            boxes = storage.load_boxes_csv(boxes_path)
            sr = moca_sr(pred, boxes)
            sr_payload = {"per_threshold": sr.per_threshold, "mean": sr.mean}
        return scores, sr_payload

    try:
        return seq, None, task(seq)
    except _INPUT_ERRORS as e:
        return seq, f"{type(e).__name__}: {e}", None


def cmd_eval(cfg: PipelineConfig, pred_root: str) -> int:
    out_dir = Path(cfg.output_dir)
    seqs = cfg.sequences and sorted(cfg.sequences) or sorted(
        p.name for p in Path(pred_root).iterdir() if p.is_dir()
    )
    if not seqs:
        raise MissingInputError(f"no prediction sequences under {pred_root}")
    fn = partial(_eval_one, cfg.dataset_root, pred_root, cfg.protocol)
    if cfg.workers <= 1 or len(seqs) <= 1:
        results = [fn(s) for s in seqs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(fn, seqs))
    errors = {seq: err for seq, err, _ in results if err}
    if errors:
        storage.write_json(out_dir / "errors.json", dict(sorted(errors.items())))
        for seq, err in sorted(errors.items()):
            log.error("sequence %s failed: %s", seq, err)
        return EXIT_INPUT
    per_sequence = {seq: payload[0] for seq, _, payload in results}
    report = evaluation.evaluate_dataset(per_sequence, cfg.protocol)
    srs = {seq: payload[1] for seq, _, payload in results if payload[1] is not None}
    extra = {"config_hash": cfg.hash}
    if srs:
        extra["sr"] = dict(sorted(srs.items()))
        extra["sr_mean"] = sum(v["mean"] for v in srs.values()) / len(srs)
    storage.write_report_json(out_dir / "report.json", report, extra=extra)
    storage.write_report_csv(out_dir / "report.csv", report)
    for seq in sorted(per_sequence):
        row = per_sequence[seq]
        print(f"{seq}: J={row['J_mean']:.4f} F={row['F_mean']:.4f} J&F={row['JF_mean']:.4f}")
    agg = report.aggregate
    print(f"mean: J={agg['J_mean']:.4f} F={agg['F_mean']:.4f} J&F={agg['JF_mean']:.4f}")
    return EXIT_OK


# -- synth ----------------------------------------------------------------------


def cmd_synth(out_dir: str, preset: str, seed: Optional[int], gaps: Tuple[int, ...]) -> int:
    out = Path(out_dir)
    if preset == "identity":
        scenes = [("identity", synth.identity_scene(seed if seed is not None else 7))]
    elif preset == "benchmark":
        # The benchmark is shipped with fixed seeds; --seed is ignored here.
        scenes = synth.benchmark_scenes()
    else:
        raise ParameterError(f"unknown preset {preset!r}")
    for name, spec in scenes:
        synth.emit_scene(spec, out / name, gaps)
        print(f"wrote {name} -> {out / name}")
    return EXIT_OK


# -- flow-vis --------------------------------------------------------------------


def cmd_flow_vis(flo: str, out: str, max_radius: Optional[float]) -> int:
    field_ = read_flo_file(flo)
    storage.save_rgb_png(out, flow_to_rgb(field_, max_radius=max_radius))
    print(f"wrote {out}")
    return EXIT_OK


# -- losses ----------------------------------------------------------------------


def cmd_losses(pred_path: str, gt_path: str, lambda_f: float, lambda_m: float,
               out: Optional[str]) -> int:
    for p in (pred_path, gt_path):
        if not Path(p).is_file():
            raise MissingInputError(f"missing npz file {p}")
    pred = np.load(pred_path)
    gt = np.load(gt_path)
    weights = LossWeights(lambda_f=lambda_f, lambda_m=lambda_m)
    if "mos" in pred.files:
        value = loss_flowp(pred["masks"], pred["fious"], pred["mos"],
                           gt["masks"], gt["fious"], gt["mos"], weights)
        kind = "flowp"
    else:
        value = loss_flowi(pred["masks"], pred["fious"], gt["masks"], gt["fious"], weights)
        kind = "flowi"
    payload = {"kind": kind, "loss": value,
               "lambda_f": weights.lambda_f, "lambda_m": weights.lambda_m}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# -- argument plumbing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--root", dest="dataset_root", help="dataset root directory")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--sequences", help="comma-separated sequence names")
    p.add_argument("--workers", type=int, help="parallel sequence workers")


def _common_overrides(args) -> dict:
    seqs = None
    if args.sequences:
        seqs = [s for s in args.sequences.split(",") if s]
    return {
        "dataset_root": args.dataset_root,
        "output_dir": args.output_dir,
        "sequences": seqs,
        "workers": args.workers,
    }


def build_parser() -> _Parser:
    parser = _Parser(prog="flowseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit a synthetic dataset")
    p.add_argument("--config", help="YAML config file (gaps, output_dir)")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--preset", default="identity", choices=("identity", "benchmark"))
    p.add_argument("--seed", type=int)
    p.add_argument("--gaps", help="comma-separated frame gaps (default 1,-1,2,-2)")

    p = sub.add_parser("select", help="candidates -> frame-level predictions")
    _add_common(p)
    p.add_argument("--nms-threshold", dest="selection_nms_iou_threshold", type=float)
    p.add_argument("--top-n", dest="selection_top_n", type=int)
    p.add_argument("--score-mode", dest="selection_score_mode", choices=selection.SCORE_MODES)
    p.add_argument("--min-score", dest="selection_min_score", type=float)

    p = sub.add_parser("associate", help="frame-level predictions -> sequence tracks")
    _add_common(p)
    p.add_argument("--pred", help="frame-level prediction root (default <out>/../frames)")
    p.add_argument("--mode", dest="assoc_mode", choices=association.MODES)
    p.add_argument("--deltas", help="comma-separated temporal deltas")

    p = sub.add_parser("combine", help="layer one prediction set behind another")
    _add_common(p)
    p.add_argument("--front", required=True, help="front predictions root")
    p.add_argument("--back", required=True, help="back predictions root")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, help="prediction root")
    p.add_argument("--protocol", choices=evaluation.PROTOCOLS)

    p = sub.add_parser("flow-vis", help="render a .flo file as a color-wheel PNG")
    p.add_argument("--config", help="YAML config file (accepted for uniformity)")
    p.add_argument("--flo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-radius", type=float)

    p = sub.add_parser("losses", help="reference training-loss calculator")
    p.add_argument("--config", help="YAML config file (accepted for uniformity)")
    p.add_argument("--pred", required=True, help="npz with masks, fious[, mos]")
    p.add_argument("--gt", required=True, help="npz with masks, fious[, mos]")
    p.add_argument("--lambda-f", type=float, default=0.01)
    p.add_argument("--lambda-m", type=float, default=0.01)
    p.add_argument("--out", help="write the JSON result here too")
    return parser


def _dispatch(args) -> int:
    if args.command == "synth":
        cfg = load_config(args.config, {})
        if args.gaps:
            gaps = tuple(int(g) for g in args.gaps.split(","))
        else:
            gaps = cfg.gaps if args.config else DEFAULT_GAPS
        out = args.out or cfg.output_dir
        return cmd_synth(out, args.preset, args.seed, gaps)
    if args.command == "flow-vis":
        load_config(args.config, {})
        return cmd_flow_vis(args.flo, args.out, args.max_radius)
    if args.command == "losses":
        load_config(args.config, {})
        return cmd_losses(args.pred, args.gt, args.lambda_f, args.lambda_m, args.out)

    overrides = _common_overrides(args)
    for key, value in vars(args).items():
        if key.startswith(("selection_", "assoc_")):
            overrides[key] = value
    if getattr(args, "deltas", None):
        overrides["assoc_deltas"] = [int(d) for d in args.deltas.split(",")]
    if getattr(args, "protocol", None):
        overrides["protocol"] = args.protocol
    cfg = load_config(args.config, overrides)

    if args.command == "select":
        return cmd_select(cfg)
    if args.command == "associate":
        return cmd_associate(cfg, args.pred)
    if args.command == "combine":
        return cmd_combine(cfg, args.front, args.back)
    if args.command == "eval":
        return cmd_eval(cfg, args.pred)
    raise AssertionError(f"unhandled command {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("FLOWSEG_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except SystemExit as e:
        return int(e.code or 0)
    except _INPUT_ERRORS as e:
        log.error("%s", e)
        print(f"flowseg: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FlowsegError as e:
        print(f"flowseg: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
