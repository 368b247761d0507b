"""Command-line front end; every subcommand is a thin wrapper on the library.

Subcommands: convert, train, enhance, grad-check, eval-detect, pipeline.
Each accepts --seed; train and pipeline optionally read a JSON config file
whose keys match the dataclass fields, with flags overriding file values.
Machine-readable CSV/JSON reports are written next to the human tables.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets, evaluation, network, pipeline, training
from .engine import (
    Tensor,
    conv2d,
    grad_check,
    grad_check_directional,
    sample_without_channel_ties,
)


def _cmd_convert(args) -> int:
    if (args.gtsrb_csv is None) == (args.gtsdb_gt is None):
        print("convert: give exactly one of --gtsrb-csv or --gtsdb-gt", file=sys.stderr)
        return 1
    if args.gtsrb_csv:
        result = datasets.parse_gtsrb_csv(
            Path(args.gtsrb_csv).read_text(), args.gtsrb_csv
        )
    else:
        result = datasets.parse_gtsdb_gt(
            Path(args.gtsdb_gt).read_text(), args.gtsdb_gt
        )
    written = datasets.write_yolo_annotations(result.annotations, args.out, args.broad)
    print(f"parsed {len(result.annotations)} boxes "
          f"({result.clamped} clamped, {len(result.issues)} bad rows); "
          f"wrote {len(written)} files under {args.out}")
    for issue in result.issues:
        print(f"  line {issue.line_no}: {issue.reason}: {issue.line}", file=sys.stderr)
    if args.quality_report and args.images:
        frames = ((p.stem, datasets.read_image(p))
                  for p in sorted(Path(args.images).iterdir())
                  if p.suffix.lower() in pipeline.IMAGE_SUFFIXES)
        scores = datasets.select_low_quality(frames, args.lum_thresh, args.blur_thresh)
        report = Path(args.quality_report)
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(
            "image_id,luminance,blur,selected\n"
            + "".join(f"{q.image_id},{q.luminance:.6f},{q.blur:.6f},{int(q.selected)}\n"
                      for q in scores)
        )
        print(f"quality report for {len(scores)} images -> {report}")
    return 0 if not result.issues else 2


def _load_pairs(root: Path) -> list[training.ImagePair]:
    low_dir, high_dir = root / "low", root / "high"
    if not low_dir.is_dir() or not high_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain low/ and high/ directories")
    pairs = []
    for low_path in sorted(low_dir.iterdir()):
        if low_path.suffix.lower() not in pipeline.IMAGE_SUFFIXES:
            continue
        high_path = high_dir / low_path.name
        if not high_path.exists():
            raise FileNotFoundError(f"no reference frame for {low_path.name}")
        pairs.append(training.ImagePair(
            datasets.read_image(low_path), datasets.read_image(high_path),
            low_path.stem,
        ))
    if not pairs:
        raise FileNotFoundError(f"no image pairs under {root}")
    return pairs


def _cmd_train(args) -> int:
    overrides = {
        "epochs": args.epochs, "crop": args.crop, "batch": args.batch,
        "lr": args.lr, "seed": args.seed,
        "curve_output": args.curve_output, "checkpoint_dir": args.checkpoint_dir,
    }
    file_cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    net_cfg = network.NetConfig(**file_cfg.get("net", {}))
    train_kwargs = dict(file_cfg.get("train", {}))
    train_kwargs.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("curve_output", "checkpoint_dir"):
        if train_kwargs.get(key) is not None:
            train_kwargs[key] = Path(train_kwargs[key])
    cfg = training.TrainConfig(**train_kwargs)

    pairs = _load_pairs(Path(args.data))
    val_pairs = _load_pairs(Path(args.val)) if args.val else []
    params, rows = training.train(pairs, val_pairs, net_cfg, cfg)
    last = rows[-1]
    print(f"epoch {last.epoch}: train_loss {last.train_loss:.6g} "
          f"val_loss {last.val_loss:.6g} val_psnr {last.val_psnr_db:.4g} dB")
    if args.checkpoint:
        network.save_checkpoint(params, args.checkpoint)
        print(f"checkpoint -> {args.checkpoint}")
    return 0


def _cmd_enhance(args) -> int:
    paths = [p for p in sorted(Path(args.images).iterdir())
             if p.suffix.lower() in pipeline.IMAGE_SUFFIXES]
    if not paths:
        print(f"enhance: no images under {args.images}", file=sys.stderr)
        return 1
    manifest = pipeline.enhance_batch(paths, args.checkpoint, args.out, args.tile)
    print(f"enhanced {len(manifest['outputs'])} images -> {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    from .engine import draw_kink_free, median_pool_channels

    worst = 0.0
    failed = False
    for k in range(args.seeds):
        seed = args.seed + k
        rng = np.random.default_rng(seed)
        x = Tensor(sample_without_channel_ties(rng, (1, 5, 4, 4), 10 * args.eps))
        w = Tensor(rng.uniform(-0.5, 0.5, (3, 5, 3, 3)))
        b = Tensor(rng.uniform(-0.1, 0.1, (1, 3, 1, 1)))
        results = {
            "conv2d": grad_check(
                lambda x, w, b, tape=None: conv2d(x, w, b, padding=1, tape=tape),
                [x, w, b], args.eps, np.random.default_rng(seed)),
            "median_pool": grad_check(
                lambda t, tape=None: median_pool_channels(t, tape),
                x.copy(), args.eps, np.random.default_rng(seed)),
        }
        params = network.init_model(network.NetConfig.small(seed=seed))
        # the directional probe displaces each element by eps/sqrt(n), so a
        # margin of eps per kink input leaves two orders of headroom; 10*eps
        # would reject nearly every draw on a full-size tape
        net_f = lambda *ts, tape=None: network.forward(ts[0], params, tape)
        xs = draw_kink_free(
            net_f,
            lambda r: [Tensor(r.uniform(0.05, 0.95, (1, 3, 8, 8)))]
            + [params[p] for p in params.paths()],
            rng, args.eps)
        results["network"] = grad_check_directional(
            net_f, xs, args.eps, n_probes=2, rng=np.random.default_rng(seed))
        for name, err in results.items():
            worst = max(worst, err)
            status = "ok" if err <= args.tol else "FAIL"
            failed = failed or err > args.tol
            print(f"seed {seed} {name}: {err:.3g} {status}")
    print(f"worst relative error: {worst:.3g} (tolerance {args.tol:g})")
    return 1 if failed else 0


def _cmd_eval_detect(args) -> int:
    det_dir, gt_dir = Path(args.detections), Path(args.ground_truth)
    dets, gts = [], []
    for gt_path in sorted(gt_dir.glob("*.txt")):
        if gt_path.name == "classes.names":
            continue
        gts.extend(evaluation.read_ground_truth_file(gt_path))
        det_path = det_dir / gt_path.name
        if det_path.exists():
            dets.extend(evaluation.read_detections_file(det_path))
    report = evaluation.evaluate(dets, gts, args.iou, args.conf)
    print(evaluation.report_table(report))
    if args.out:
        out = Path(args.out)
        evaluation.write_report_csv(report, out / "report.csv")
        evaluation.write_report_json(report, out / "report.json")
        (out / "report.txt").write_text(evaluation.report_table(report) + "\n")
        print(f"reports -> {out}")
    return 0


def _cmd_pipeline(args) -> int:
    overrides = {
        "images_dir": args.images, "ground_truth_dir": args.ground_truth,
        "output_dir": args.out, "checkpoint": args.checkpoint,
        "detector_command": args.detector_command,
        "detections_dir": args.detections_dir,
        "stub_fixture": args.stub_fixture,
        "route": args.route, "iou_thresh": args.iou, "conf_thresh": args.conf,
        "tile": args.tile, "seed": args.seed,
    }
    if args.config:
        cfg = pipeline.PipelineConfig.from_json_file(args.config, **overrides)
    else:
        required = ("images_dir", "ground_truth_dir", "output_dir", "checkpoint")
        missing = [k for k in required if overrides.get(k) is None]
        if missing:
            print(f"pipeline: missing {', '.join(missing)} (flag or --config)",
                  file=sys.stderr)
            return 1
        kwargs = {k: v for k, v in overrides.items() if v is not None}
        for key in ("images_dir", "ground_truth_dir", "output_dir", "checkpoint",
                    "detections_dir", "stub_fixture"):
            if key in kwargs:
                kwargs[key] = Path(kwargs[key])
        cfg = pipeline.PipelineConfig(**kwargs)
    report = pipeline.run_pipeline(cfg)
    print(pipeline.delta_table(report))
    for arm, score in (("raw", report.raw), ("enhanced", report.enhanced)):
        for image_id in score.missing:
            print(f"missing {arm} detections for {image_id} (scored as none)",
                  file=sys.stderr)
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signlight",
        description="Low-light enhancement and detection scoring toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="dataset annotations to YOLO-style text")
    p.add_argument("--gtsrb-csv", help="GTSRB per-track CSV file")
    p.add_argument("--gtsdb-gt", help="GTSDB gt.txt file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--broad", action="store_true",
                   help="write broad category ids instead of fine classes")
    p.add_argument("--images", help="image directory for --quality-report")
    p.add_argument("--quality-report", help="CSV of per-image quality scores")
    p.add_argument("--lum-thresh", type=float, default=0.25)
    p.add_argument("--blur-thresh", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("train", help="train the enhancer on low/high pairs")
    p.add_argument("--data", required=True, help="directory with low/ and high/")
    p.add_argument("--val", help="validation directory with low/ and high/")
    p.add_argument("--config", help="JSON with net/train config sections")
    p.add_argument("--epochs", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--curve-output", help="per-epoch CSV path")
    p.add_argument("--checkpoint-dir", help="per-epoch checkpoint directory")
    p.add_argument("--checkpoint", help="final checkpoint path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("enhance", help="run images through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, help="process in tile x tile windows")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("eval-detect", help="score detections against ground truth")
    p.add_argument("--detections", required=True, help="directory of per-image txt")
    p.add_argument("--ground-truth", required=True, help="directory of per-image txt")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--out", help="directory for csv/json/txt reports")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval_detect)

    p = sub.add_parser("pipeline", help="two-arm enhance-then-detect comparison")
    p.add_argument("--config", help="JSON PipelineConfig")
    p.add_argument("--images")
    p.add_argument("--ground-truth")
    p.add_argument("--out")
    p.add_argument("--checkpoint")
    p.add_argument("--detector-command")
    p.add_argument("--detections-dir")
    p.add_argument("--stub-fixture")
    p.add_argument("--route", choices=["all", "auto"])
    p.add_argument("--iou", type=float)
    p.add_argument("--conf", type=float)
    p.add_argument("--tile", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"signlight {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
