"""embed-export: encode instruction/exemplar texts into embedding CSVs."""

from __future__ import annotations

import argparse
import sys

from .assets import AssetError, load_assets
from .encoder import EncoderError, TextEncoder
from .export import export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed-export", description=__doc__)
    parser.add_argument("--instructions", required=True, help="JSON list of {id, text}")
    parser.add_argument(
        "--exemplars",
        required=True,
        help="JSON list of {id, text} or {id, examples: [{input, output}, ...]}",
    )
    parser.add_argument("--encoder", required=True, help="model name or local path")
    parser.add_argument("--pooling", choices=("cls", "mean"), default="cls")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        assets = load_assets(args.instructions, args.exemplars)
    except (AssetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        encoder = TextEncoder(args.encoder, pooling=args.pooling, batch_size=args.batch_size)
        inst_path, ex_path = export_embeddings(assets, encoder, args.out)
    except EncoderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {inst_path} and {ex_path} (dim {encoder.hidden_size})", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
