"""Command-line entry points for the export bridge.

Exit codes: 0 ok, 1 usage error, 2 missing input / model load failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .export import export_candidates, export_flows, VideoError
from .models import ModelLoadError, load_flow_estimator, load_segmenter

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="flowseg-adapter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-candidates", help="segment every grid prompt and export masks")
    p.add_argument("--video", required=True, help="directory of image frames")
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="stub")
    p.add_argument("--grid-side", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("export-flows", help="estimate and export multi-gap optical flow")
    p.add_argument("--video", required=True, help="directory of image frames")
    p.add_argument("--out", required=True)
    p.add_argument("--estimator", default="stub")
    p.add_argument("--gaps", default="1,-1,2,-2", help="comma-separated frame gaps")
    return parser


def _note_failure(out_dir: str, error: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps({"error": error, "format_version": 1}, indent=2, sort_keys=True) + "\n"
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "export-candidates":
            manifest = export_candidates(
                args.video, load_segmenter(args.model), args.grid_side, args.out,
                threshold=args.threshold,
            )
            print(f"exported {sum(manifest.candidate_counts.values())} candidates -> {args.out}")
        else:
            gaps = [int(g) for g in args.gaps.split(",") if g]
            manifest = export_flows(args.video, load_flow_estimator(args.estimator), gaps, args.out)
            flows = sum(1 for f in manifest.files if f.endswith(".flo"))
            print(f"exported {flows} flow fields -> {args.out}")
        return EXIT_OK
    except (ModelLoadError, VideoError, FileNotFoundError) as e:
        _note_failure(args.out, str(e))
        print(f"flowseg-adapter: error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
