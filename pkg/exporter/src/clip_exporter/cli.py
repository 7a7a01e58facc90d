"""Command line interface.

    clip-export export-images --manifest m.json --out x.emb
    clip-export export-texts --in captions.txt --out t.emb

Exit codes: 0 success, 2 bad arguments/manifest, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import ExportManifest, export_image_embeddings, export_text_embeddings
from .formats import ExportFormatError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clip-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_img = sub.add_parser("export-images", help="encode image crops listed in a manifest")
    p_img.add_argument("--manifest", required=True, help="manifest JSON path")
    p_img.add_argument("--out", required=True, help="output .emb path")
    p_img.add_argument("--encoder", default=None, help="override the manifest encoder")

    p_txt = sub.add_parser("export-texts", help="encode one caption per line")
    p_txt.add_argument("--in", dest="infile", required=True, help="captions text file")
    p_txt.add_argument("--out", required=True, help="output .emb path")
    p_txt.add_argument("--encoder", default="auto")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-images":
            manifest = ExportManifest.load(args.manifest)
            if args.encoder:
                manifest.encoder = args.encoder
            matrix = export_image_embeddings(manifest, args.out)
        else:
            path = Path(args.infile)
            if not path.exists():
                print(f"error: {path} does not exist", file=sys.stderr)
                return 3
            texts = [line.strip() for line in path.read_text().splitlines() if line.strip()]
            matrix = export_text_embeddings(texts, args.out, encoder_name=args.encoder)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ExportFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} embeddings to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
