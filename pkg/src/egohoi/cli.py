"""``egohoi`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .augment import AugmentConfig
from .errors import EgoHoiError, SchemaError

log = logging.getLogger("egohoi")


def _common(p: argparse.ArgumentParser, default=None) -> None:
    # accepted before or after the subcommand; the subparser copy only
    # overrides when given
    p.add_argument("--config", default=default, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=default, help="global seed (default 0)")
    p.add_argument("--jobs", type=int, default=default,
                   help="worker threads for frame-parallel stages")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=default if default is not None else False)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="egohoi",
        description="Multi-camera hand pose annotation and hand-object interaction detection.")
    _common(ap)
    sub = ap.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        p = _add(name, **kw)
        _common(p, argparse.SUPPRESS)
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("simulate", help="write a synthetic rig: cameras, detections, ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--cams", type=int, default=3)
    p.add_argument("--frames", type=int, default=200, help="number of hand poses (pairs)")
    p.add_argument("--sigma", type=float, default=1.0, help="2D noise, px")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--joints", type=int, default=21)
    p.add_argument("--fusion", type=int, default=0, help="also write N fusion samples")

    p = sub.add_parser("calibrate", help="camera extrinsics from cube corner detections")
    p.add_argument("--cameras")
    p.add_argument("--cube")
    p.add_argument("--detections")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("annotate-pair", help="triangulate hand-only frames, label their partners")
    p.add_argument("--cameras")
    p.add_argument("--detections")
    p.add_argument("--threshold", type=float, help="gate threshold on the weighted loss")
    p.add_argument("--out", required=True)

    p = sub.add_parser("augment", help="background swap, occluders and photometric warp")
    p.add_argument("--images")
    p.add_argument("--backgrounds")
    p.add_argument("--labels", help="JSON {image name: [[u, v], ...]}")
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="per-frame HOI probability, smoothed timeline")
    p.add_argument("--manifest")
    p.add_argument("--model")
    p.add_argument("--fps", type=float)
    p.add_argument("--threshold", type=float, help="decision threshold on p_hoi")
    p.add_argument("--out", required=True)

    p = sub.add_parser("segment", help="re-smooth a timeline CSV and extract segments")
    p.add_argument("--timeline", required=True)
    p.add_argument("--fps", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-pck", help="PCK curve and AUC")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--max-threshold", type=float, required=True)
    p.add_argument("--min-threshold", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=51)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-seg", help="segmental precision/recall/F1 and frame accuracy")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--frames", type=int, help="timeline length for frame accuracy")
    p.add_argument("--out", required=True, help="report.json path")

    p = sub.add_parser("train-fusion", help="train the cue-fusion classifier")
    p.add_argument("--manifest")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--ablate", default="", help="comma-separated cues to drop: pose,hand,object")
    p.add_argument("--out", required=True)
    return ap


def _config(args, **paths) -> pipeline.PipelineConfig:
    return pipeline.PipelineConfig.load(args.config, seed=args.seed, jobs=args.jobs, **paths)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _dispatch(args)
    except EgoHoiError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    except (OSError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "simulate":
        cfg = _config(args)
        written = pipeline.run_simulate(args.out, cfg.seed, args.cams, args.frames, args.sigma,
                                        args.dropout, args.joints, args.fusion)
        for k, v in written.items():
            print(f"{k}: {v}")
    elif cmd == "calibrate":
        cfg = _config(args, cameras=args.cameras, cube=args.cube, detections=args.detections)
        rms = pipeline.run_calibrate(cfg, args.out, args.restarts)
        for cam, r in rms.items():
            print(f"{cam}: rms {r:.4f} px")
    elif cmd == "annotate-pair":
        cfg = _config(args, cameras=args.cameras, detections=args.detections,
                      gate_threshold=args.threshold)
        s = pipeline.run_annotate_pair(cfg, args.out)
        print(f"frames {s['frames']} valid {s['valid']} invalid {s['invalid']}")
    elif cmd == "augment":
        cfg = _config(args, images=args.images, backgrounds=args.backgrounds)
        if cfg.images is None:
            raise SchemaError("augment: --images is required (or 'images' in --config)")
        aug = AugmentConfig.from_json({**(cfg.augment or {}), "seed": cfg.seed})
        names = pipeline.run_augment(cfg, aug, args.out, args.labels)
        print(f"augmented {len(names)} images")
    elif cmd == "detect":
        cfg = _config(args, manifest=args.manifest, model=args.model, fps=args.fps,
                      decision_threshold=args.threshold)
        tl = pipeline.run_detect(cfg, args.out)
        n_hoi = sum(s == "hoi" for s in tl.smoothed)
        print(f"frames {len(tl)} hoi {n_hoi}")
    elif cmd == "segment":
        cfg = _config(args, fps=args.fps)
        tl = pipeline.run_segment(cfg, args.timeline, args.out)
        print(f"frames {len(tl)}")
    elif cmd == "eval-pck":
        r = pipeline.run_eval_pck(args.pred, args.gt, args.max_threshold, args.out,
                                  args.min_threshold, args.steps)
        print(f"auc {r['auc']:.6f}")
    elif cmd == "eval-seg":
        r = pipeline.run_report(args.pred, args.gt, args.iou, args.frames)
        Path(args.out).write_text(json.dumps(r, indent=1) + "\n")
        print(" ".join(f"{k} {v:.6f}" for k, v in r.items()))
    elif cmd == "train-fusion":
        cfg = _config(args, manifest=args.manifest)
        ablate = {c.strip() for c in args.ablate.split(",") if c.strip()}
        res, acc = pipeline.run_train_fusion(cfg, args.out, args.lr, args.epochs, args.hidden,
                                             ablate or None)
        print(f"loss {res.losses[-1]:.6f} accuracy {acc:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
