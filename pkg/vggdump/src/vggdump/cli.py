"""Command line: vggdump dump --image P --layers relu3_1,relu5_1 --out D."""

from __future__ import annotations

import argparse
import sys

from .dump import DumpError, DumpRequest, dump_features


def cmd_dump(args) -> int:
    try:
        req = DumpRequest(
            image_path=args.image,
            layers=[name.strip() for name in args.layers.split(",") if name.strip()],
            out_dir=args.out,
            weights_path=args.weights,
        )
        written = dump_features(req)
    except DumpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vggdump", description="Export VGG19 activations to .tnsr files"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("dump", help="dump one image's activations")
    p.add_argument("--image", required=True)
    p.add_argument("--layers", default="relu3_1", help="comma-separated layer names")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--weights",
        default=None,
        help="local VGG19 state-dict path (default: torchvision cache)",
    )
    p.set_defaults(fn=cmd_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
