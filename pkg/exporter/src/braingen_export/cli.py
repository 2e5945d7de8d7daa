"""Command-line entry point: export-signals and export-embeddings."""
from __future__ import annotations

import argparse
import sys

from .embeddings import ClipEncoder, PixelHashEncoder, export_embeddings
from .job import ExportError, ExportJob
from .signals import export_signals


def _job_from_args(args) -> ExportJob:
    return ExportJob(
        source_root=args.source, image_dir=args.images,
        archive_out=args.archive, embeddings_out=args.embeddings,
        subjects=args.subject, dataset_id=args.dataset_id,
        stim_onset_sample=args.stim_onset,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="braingen-export")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("export-signals", "export-embeddings"):
        p = sub.add_parser(name)
        p.add_argument("--source", required=True,
                       help="root directory of per-subject epoch files")
        p.add_argument("--images", required=True, help="stimulus image directory")
        p.add_argument("--archive", required=True, help="output archive directory")
        p.add_argument("--embeddings", required=True,
                       help="output embedding .f32 path")
        p.add_argument("--subject", action="append", required=True)
        p.add_argument("--dataset-id", default="export")
        p.add_argument("--stim-onset", type=int, default=0)
        if name == "export-embeddings":
            p.add_argument("--encoder", choices=["clip", "pixel-hash"],
                           default="clip")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = _job_from_args(args)
        if args.command == "export-signals":
            out = export_signals(job)
        else:
            encoder = (PixelHashEncoder() if args.encoder == "pixel-hash"
                       else ClipEncoder())
            out = export_embeddings(job, encoder)
        print(f"wrote {out}")
        return 0
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
