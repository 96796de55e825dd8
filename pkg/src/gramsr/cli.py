"""Command-line entry points: pretrain, train, infer, sweep, evaluate, degrade, serve."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import guidance, service
from .corpus import build_corpus
from .degrade import make_pair
from .errors import GramSRError
from .image import load_image, save_image
from .trainer import RunConfig, load_checkpoint, pretrain_base, save_checkpoint, train_stage, validate

CONFIG_ENV_VAR = "GRAMSR_CONFIG"


class UsageError(GramSRError):
    """Bad invocation (missing config); exits with status 2 like argparse."""


def _load_config(path: str | None) -> RunConfig:
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        raise UsageError(f"no config given (pass --config or set {CONFIG_ENV_VAR})")
    return RunConfig.load_json(path)


def _scales(args) -> guidance.GuidanceScales:
    return guidance.GuidanceScales(args.lpix, args.lsem, args.lgram)


def cmd_pretrain(args) -> int:
    cfg = _load_config(args.config)
    ckpt = pretrain_base(cfg)
    save_checkpoint(ckpt, args.out)
    print(f"stage-0 checkpoint written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    ckpt = load_checkpoint(args.ckpt, expected_stride=cfg.scale_factor)
    out = train_stage(args.stage, ckpt, cfg)
    save_checkpoint(out, args.out)
    print(f"stage-{args.stage} checkpoint written to {args.out}")
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    lq = load_image(args.infile)
    sr = guidance.infer(lq, _scales(args), args.mode, ckpt)
    save_image(sr, args.out)
    print(f"restored image written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    lq = load_image(args.infile)
    gt = load_image(args.gt) if args.gt else None
    grid = [guidance.GuidanceScales(args.lpix, args.lsem, float(g)) for g in args.lgram_grid.split(",")]
    report = guidance.sweep(lq, grid, args.mode, ckpt, gt=gt)
    csv_text = report.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"sweep CSV written to {args.out}")
    else:
        sys.stdout.write(csv_text)
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    data_dir = Path(args.data)
    pairs = []
    for lq_path in sorted(data_dir.glob("*_lq.png")):
        hq_path = data_dir / lq_path.name.replace("_lq.png", "_hq.png")
        if hq_path.exists():
            pairs.append((load_image(lq_path), load_image(hq_path)))
    report = validate(ckpt, val_set=pairs, scales=_scales(args))
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_degrade(args) -> int:
    cfg = _load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.hq_dir:
        hq_images = [load_image(p) for p in sorted(Path(args.hq_dir).iterdir()) if p.suffix.lower() in (".png", ".ppm")]
    else:
        hq_images = build_corpus(args.count or cfg.train_images, cfg.hq_size, cfg.corpus_seed)
    for i, hq in enumerate(hq_images):
        lq, _ = make_pair(hq, cfg.degradation, seed=cfg.corpus_seed + 31 * i)
        save_image(lq, out_dir / f"{i:04d}_lq.png")
        save_image(hq, out_dir / f"{i:04d}_hq.png")
    print(f"{len(hq_images)} LQ-HQ pairs written to {out_dir}")
    return 0


def cmd_serve(args) -> int:
    expected_stride = None
    if args.config or os.environ.get(CONFIG_ENV_VAR):
        expected_stride = _load_config(args.config).scale_factor
    ckpt = load_checkpoint(args.ckpt, expected_stride=expected_stride)
    service.serve(ckpt, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gramsr", description="One-step guided super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pretrain the base denoiser (stage 0)")
    p.add_argument("--config", help=f"run-config JSON (or ${CONFIG_ENV_VAR})")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="train one adapter stage")
    p.add_argument("--stage", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--config", help=f"run-config JSON (or ${CONFIG_ENV_VAR})")
    p.add_argument("--ckpt", required=True, help="checkpoint from the previous stage")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    def add_scale_flags(p):
        p.add_argument("--lpix", type=float, default=1.0)
        p.add_argument("--lsem", type=float, default=1.0)
        p.add_argument("--lgram", type=float, default=1.0)
        p.add_argument("--mode", choices=guidance.MODES, default="residual")

    p = sub.add_parser("infer", help="restore one LQ image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    add_scale_flags(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("sweep", help="guidance-scale sweep over a lambda_gram grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--gt", help="optional ground-truth image for fidelity metrics")
    p.add_argument("--lgram-grid", default="0.25,0.5,0.75,1.0")
    p.add_argument("--out", help="CSV output path (stdout when omitted)")
    add_scale_flags(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("evaluate", help="validate a checkpoint over a folder of *_lq.png / *_hq.png pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    add_scale_flags(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("degrade", help="emit synthetic LQ-HQ pairs")
    p.add_argument("--config", help=f"run-config JSON (or ${CONFIG_ENV_VAR})")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, help="number of corpus images (default from config)")
    p.add_argument("--hq-dir", help="use existing HQ images instead of the procedural corpus")
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=service.DEFAULT_PORT)
    p.add_argument("--config", help="optional run-config; its codec stride must match the checkpoint")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (GramSRError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
