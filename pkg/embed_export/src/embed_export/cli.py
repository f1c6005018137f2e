"""embed-export command line: audio + VAD -> .dkeb embeddings."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ExportError
from .export import ExportJob, export
from .providers import available_providers
from .windows import WindowPlan, parse_lab


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="run a pretrained embedding provider over audio windows "
        "and write a .dkeb file",
    )
    parser.add_argument("--audio", required=True, help="PCM WAV input")
    parser.add_argument("--vad", required=True,
                        help="speech segments, '<onset> <end> [label]' per line")
    parser.add_argument("--win", type=float, default=5.0, help="window length, seconds")
    parser.add_argument("--shift", type=float, default=1.0, help="window shift, seconds")
    parser.add_argument("--min-window", type=float, default=1.0,
                        help="shortest emitted window, seconds")
    parser.add_argument("--provider", default="spectral:512",
                        help=f"provider id (available: {', '.join(available_providers())})")
    parser.add_argument("--recording-id", default=None,
                        help="recording id for the metadata; defaults to the audio stem")
    parser.add_argument("-o", "--output", required=True, help=".dkeb output path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            audio_path=args.audio,
            vad_segments_ms=parse_lab(Path(args.vad).read_text()),
            plan=WindowPlan(args.win, args.shift, args.min_window),
            provider_id=args.provider,
            output_path=args.output,
            recording_id=args.recording_id,
        )
        n_rows = export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {n_rows} embeddings to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
