#!/usr/bin/env python3
"""Texture-guidance sweep: vary lambda_gram over the standard grid on the
validation corpus and report per-scale averaged metrics.

    python3 scripts/sweep_lambda_gram.py --ckpt runs/demo/stage3.ckpt --out sweep.csv
"""
import argparse
import csv
import sys

from gramsr.guidance import GuidanceScales
from gramsr.trainer import load_checkpoint, validate

GRID = (0.25, 0.5, 0.75, 1.0)


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--ckpt", required=True, help="stage-3 checkpoint")
    ap.add_argument("--out", help="CSV path (stdout when omitted)")
    ap.add_argument("--lpix", type=float, default=1.0)
    ap.add_argument("--lsem", type=float, default=1.0)
    args = ap.parse_args()

    ckpt = load_checkpoint(args.ckpt)
    rows = []
    for g in GRID:
        rep = validate(ckpt, scales=GuidanceScales(args.lpix, args.lsem, g))
        rows.append([args.lpix, args.lsem, g, rep.psnr, rep.ssim, rep.auxiliary["gram_distance"], rep.auxiliary["perceptual"]])
        print(f"lambda_gram={g}: psnr={rep.psnr:.3f} ssim={rep.ssim:.4f} gram={rep.auxiliary['gram_distance']:.4e}")

    sink = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.writer(sink)
    writer.writerow(["lambda_pix", "lambda_sem", "lambda_gram", "psnr", "ssim", "gram_distance", "perceptual"])
    writer.writerows(rows)
    if args.out:
        sink.close()
        print(f"CSV written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
