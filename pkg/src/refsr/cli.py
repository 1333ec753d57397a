"""Command-line surface.

Subcommands: precompute, train, infer, eval, dump-fallback (debug), and
emit-derived (writes the derived matching inputs for external feature
dumps). Configs are plain key=value files; manifests are tab-separated
hr/ref/level lines.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import RunConfig, load_config, load_manifest
from .features import FallbackExtractor
from .pipeline import (
    emit_derived_images,
    evaluate,
    infer,
    load_model,
    precompute_mt,
    train,
)
from .tensor_io import write_tensor
from .tensors import read_png, write_png


def _config_from(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig()


def cmd_precompute(args) -> int:
    cfg = _config_from(args)
    manifest = load_manifest(args.manifest)
    cache_dir = args.cache or cfg.cache_dir
    entries = precompute_mt(manifest, cfg, cache_dir)
    failures = [e for e in entries if e.error]
    for e in entries:
        status = f"ERROR {e.error}" if e.error else f"cached {e.key[:12]}"
        print(f"{e.pair.hr_path} | {e.pair.ref_path} -> {status}")
    print(f"{len(entries) - len(failures)}/{len(entries)} pairs cached in {cache_dir}")
    return 1 if failures else 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    manifest = load_manifest(args.manifest)
    summary = train(manifest, cfg, args.out)
    last = summary["rows"][-1]
    print(f"finished at step {last['step']}: total={last['total']:.6f}")
    print(f"checkpoint: {summary['final_checkpoint']}")
    print(f"loss csv:   {summary['loss_csv']}")
    return 0


def cmd_infer(args) -> int:
    cfg_override = load_config(args.config) if args.config else None
    gen, params, cfg = load_model(args.model, cfg_override)
    i_lr = read_png(args.lr)
    i_ref = read_png(args.ref)
    from .config import PairRecord

    sr = infer(i_lr, i_ref, gen, params, cfg, pair=PairRecord(args.lr, args.ref))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_png(sr, args.out)
    print(f"wrote {sr.height}x{sr.width} SR image to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from(args)
    manifest = load_manifest(args.manifest)
    report = evaluate(manifest, args.results, cfg, args.out)
    for name in report["missing"]:
        print(f"missing output: {name}", file=sys.stderr)
    if report["means"]:
        m = report["means"]
        print(
            f"mean over {len(report['rows'])} pairs: "
            f"psnr={m['psnr_db']:.3f} dB ssim={m['ssim']:.4f} gram={m['gram_dist']:.4f}"
        )
    print(f"metrics csv: {args.out}")
    return 1 if report["missing"] else 0


def cmd_dump_fallback(args) -> int:
    img = read_png(args.image)
    extractor = FallbackExtractor(args.seed)
    pyramid = extractor.extract(img)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    for fm in pyramid.levels:
        path = os.path.join(args.out, f"{stem}.{fm.level_tag}.tnsr")
        write_tensor(fm.data.astype(np.float32), path)
        print(f"{fm.level_tag}: {fm.channels}x{fm.height}x{fm.width} -> {path}")
    return 0


def cmd_emit_derived(args) -> int:
    manifest = load_manifest(args.manifest)
    written = emit_derived_images(manifest, args.out)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refsr",
        description="Reference-conditioned super-resolution by feature-space texture transfer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="fill the offline texture-map cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--cache", default=None, help="cache directory (default from config)")
    p.set_defaults(fn=cmd_precompute)

    p = sub.add_parser("train", help="train on a pair manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one LR image against a reference")
    p.add_argument("--lr", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="override the checkpoint's config")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM/Gram-distance metrics over results")
    p.add_argument("--manifest", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("dump-fallback", help="debug-dump fallback extractor levels")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_dump_fallback)

    p = sub.add_parser("emit-derived", help="write derived matching inputs as PNGs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_emit_derived)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
