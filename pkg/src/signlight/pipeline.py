"""Two-arm enhance-then-detect comparison around a pluggable detector.

The pipeline never trains or implements a detector. It builds an enhanced
copy of the input set (routing either every image or only the ones a
quality screen flags), obtains detections for both the raw and enhanced
arms from the same detector, scores both against the same ground truth at
the same thresholds, and reports per-class AP deltas plus the mAP delta.

Detector modes (exactly one per run):

    command   shell-free template with {images} and {out} placeholders,
              invoked once per arm; it must leave one <image_id>.txt of
              detections per image in {out}
    dets_dir  precomputed detections, one directory per arm (one directory
              serves both arms when only one is given)
    stub      deterministic lookup from a JSON fixture mapping image id ->
              [[class_id, confidence, cx, cy, w, h], ...]; emitted verbatim

A missing per-image detection file is recorded, scored as zero detections,
and the run continues; a failing detector command aborts.
"""

from __future__ import annotations

import json
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import QualityScore, read_image, select_low_quality, write_image
from .engine import ConfigError, Tensor
from .evaluation import (
    Detection,
    EvalReport,
    GroundTruth,
    evaluate,
    format_detection_line,
    parse_detections,
    read_detections_file,
    read_ground_truth_file,
    report_table,
    write_report_csv,
    write_report_json,
)
from .network import (
    ModelParams,
    crop_back,
    forward,
    load_checkpoint,
    pad_to_multiple,
)

__all__ = [
    "PipelineConfig",
    "PipelineError",
    "ArmScore",
    "ComparisonReport",
    "StubDetector",
    "enhance_image",
    "enhance_batch",
    "run_pipeline",
    "delta_table",
]

IMAGE_SUFFIXES = (".ppm", ".png")


class PipelineError(RuntimeError):
    """A pipeline stage failed outright (bad config, detector failure)."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one comparison run needs; exactly one detector mode."""

    images_dir: Path
    ground_truth_dir: Path
    output_dir: Path
    checkpoint: Path
    detector_command: str | None = None
    detections_dir: Path | None = None
    detections_dir_enhanced: Path | None = None
    stub_fixture: Path | None = None
    stub_fixture_enhanced: Path | None = None
    route: str = "all"
    lum_thresh: float = 0.25
    blur_thresh: float = 50.0
    iou_thresh: float = 0.5
    conf_thresh: float = 0.25
    tile: int | None = None
    seed: int = 0

    def __post_init__(self):
        modes = [
            self.detector_command is not None,
            self.detections_dir is not None,
            self.stub_fixture is not None,
        ]
        if sum(modes) != 1:
            raise ConfigError(
                "exactly one detector mode required: detector_command, "
                f"detections_dir or stub_fixture (got {sum(modes)})"
            )
        if self.route not in ("all", "auto"):
            raise ConfigError(f"route must be 'all' or 'auto', got {self.route!r}")

    @classmethod
    def from_json_file(cls, path: str | Path, **overrides) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text())
        raw.update({k: v for k, v in overrides.items() if v is not None})
        path_fields = {
            "images_dir", "ground_truth_dir", "output_dir", "checkpoint",
            "detections_dir", "detections_dir_enhanced",
            "stub_fixture", "stub_fixture_enhanced",
        }
        kwargs = {
            k: (Path(v) if k in path_fields and v is not None else v)
            for k, v in raw.items()
        }
        return cls(**kwargs)


@dataclass(frozen=True)
class ArmScore:
    report: EvalReport
    missing: list[str]


@dataclass(frozen=True)
class ComparisonReport:
    raw: ArmScore
    enhanced: ArmScore
    delta_ap: dict[int, float]
    delta_map: float
    routed: list[str]
    quality: list[QualityScore]
    exit_code: int


class StubDetector:
    """Deterministic detector: a fixture table emitted verbatim per image."""

    def __init__(self, table: dict[str, list[Detection]]):
        self._table = table

    @classmethod
    def from_file(cls, path: str | Path) -> "StubDetector":
        raw = json.loads(Path(path).read_text())
        table: dict[str, list[Detection]] = {}
        for image_id, rows in raw.items():
            lines = "\n".join(
                f"{int(r[0])} {r[1]} {r[2]} {r[3]} {r[4]} {r[5]}" for r in rows
            )
            table[image_id] = parse_detections(lines, image_id, str(path))
        return cls(table)

    def image_ids(self) -> list[str]:
        return sorted(self._table)

    def detect(self, image_id: str) -> list[Detection]:
        if image_id not in self._table:
            raise KeyError(f"stub fixture has no entry for image {image_id!r}")
        return list(self._table[image_id])


# ---------------------------------------------------------------------------
# enhancement


def enhance_image(image: Tensor, params: ModelParams, tile: int | None = None) -> Tensor:
    """Enhance one frame of any size.

    The frame is reflect-padded to the stream divisor (or to ``tile``) and
    cropped back; with ``tile`` set, the padded frame is processed in
    non-overlapping tile x tile windows to bound peak memory.
    """
    div = params.config.divisor
    if tile is not None:
        if tile < div or tile % div:
            raise ConfigError(
                f"tile {tile} must be a positive multiple of the stream divisor {div}"
            )
        padded, frame = pad_to_multiple(image, tile)
        out = np.empty_like(padded.data)
        for top in range(0, padded.h, tile):
            for left in range(0, padded.w, tile):
                window = Tensor(
                    padded.data[:, :, top : top + tile, left : left + tile].copy()
                )
                out[:, :, top : top + tile, left : left + tile] = forward(
                    window, params
                ).data
        return crop_back(Tensor(out), frame)
    padded, frame = pad_to_multiple(image, div)
    return crop_back(forward(padded, params), frame)


def enhance_batch(
    image_paths: Sequence[str | Path],
    checkpoint: str | Path,
    out_dir: str | Path,
    tile: int | None = None,
) -> dict:
    """Enhance files through a checkpoint, preserving name and format.

    Returns the manifest (also written to ``out_dir/manifest.json``)
    mapping image id to the output path.
    """
    params = load_checkpoint(checkpoint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"checkpoint": str(checkpoint), "outputs": {}}
    for path in image_paths:
        p = Path(path)
        enhanced = enhance_image(read_image(p), params, tile)
        target = out / p.name
        write_image(enhanced, target)
        manifest["outputs"][p.stem] = str(target)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# detector invocation


def _write_stub_detections(stub: StubDetector, image_ids: Sequence[str],
                           out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_id in image_ids:
        try:
            dets = stub.detect(image_id)
        except KeyError:
            continue  # surfaces later as a missing detection file
        lines = [format_detection_line(d) for d in dets]
        (out_dir / f"{image_id}.txt").write_text(
            "\n".join(lines) + ("\n" if lines else "")
        )


def _run_detector_command(template: str, images_dir: Path, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    argv = [
        part.format(images=str(images_dir), out=str(out_dir))
        for part in shlex.split(template)
    ]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise PipelineError(
            f"detector command failed with code {proc.returncode} on "
            f"{images_dir}: {proc.stderr.strip() or proc.stdout.strip()}"
        )


def _collect_detections(det_dir: Path, image_ids: Sequence[str]) -> tuple[list[Detection], list[str]]:
    detections: list[Detection] = []
    missing: list[str] = []
    for image_id in image_ids:
        path = det_dir / f"{image_id}.txt"
        if not path.exists():
            missing.append(image_id)
            continue
        detections.extend(read_detections_file(path, image_id))
    return detections, missing


# ---------------------------------------------------------------------------
# orchestration


def delta_table(report: ComparisonReport, names: dict[int, str] | None = None) -> str:
    """Human-readable per-class AP delta table plus the mAP delta."""
    rows = [("class", "ap_raw", "ap_enhanced", "delta")]
    for cid in sorted(report.delta_ap):
        raw = report.raw.report.per_class[cid].ap
        enh = report.enhanced.report.per_class[cid].ap
        label = names[cid] if names and cid in names else f"class_{cid}"
        rows.append((
            label,
            f"{100.0 * raw:.2f}%",
            f"{100.0 * enh:.2f}%",
            f"{100.0 * (enh - raw):+.2f}%",
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.append("")
    lines.append(
        f"mAP {100.0 * report.raw.report.map_value:.2f}% -> "
        f"{100.0 * report.enhanced.report.map_value:.2f}%  "
        f"(delta {100.0 * report.delta_map:+.2f}%)"
    )
    return "\n".join(lines)


def _load_ground_truth(gt_dir: Path, image_ids: Sequence[str]) -> list[GroundTruth]:
    boxes: list[GroundTruth] = []
    for image_id in image_ids:
        path = gt_dir / f"{image_id}.txt"
        if path.exists():
            boxes.extend(read_ground_truth_file(path, image_id))
    return boxes


def run_pipeline(config: PipelineConfig) -> ComparisonReport:
    """Run the full two-arm comparison; see the module docstring.

    Raw inputs are never touched: enhanced frames and every report land
    under ``config.output_dir``. Exit code 0 means every stage succeeded,
    2 means the run finished but some detection files were missing.
    """
    images = sorted(
        p for p in Path(config.images_dir).iterdir()
        if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        raise PipelineError(f"no {'/'.join(IMAGE_SUFFIXES)} images in {config.images_dir}")
    image_ids = [p.stem for p in images]
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    # route: decide which frames get enhanced
    quality = select_low_quality(
        ((p.stem, read_image(p)) for p in images),
        config.lum_thresh, config.blur_thresh,
    )
    if config.route == "all":
        routed = list(image_ids)
    else:
        routed = [q.image_id for q in quality if q.selected]

    # enhanced arm input: enhanced frames for routed ids, copies otherwise
    params = load_checkpoint(config.checkpoint)
    enhanced_dir = out / "enhanced"
    enhanced_dir.mkdir(exist_ok=True)
    for p in images:
        target = enhanced_dir / p.name
        if p.stem in set(routed):
            write_image(enhance_image(read_image(p), params, config.tile), target)
        else:
            shutil.copyfile(p, target)

    # detections for both arms
    raw_det_dir = out / "detections_raw"
    enh_det_dir = out / "detections_enhanced"
    if config.detector_command is not None:
        _run_detector_command(config.detector_command, Path(config.images_dir), raw_det_dir)
        _run_detector_command(config.detector_command, enhanced_dir, enh_det_dir)
    elif config.stub_fixture is not None:
        stub_raw = StubDetector.from_file(config.stub_fixture)
        stub_enh = (StubDetector.from_file(config.stub_fixture_enhanced)
                    if config.stub_fixture_enhanced is not None else stub_raw)
        _write_stub_detections(stub_raw, image_ids, raw_det_dir)
        _write_stub_detections(stub_enh, image_ids, enh_det_dir)
    else:
        raw_det_dir = Path(config.detections_dir)
        enh_det_dir = (Path(config.detections_dir_enhanced)
                       if config.detections_dir_enhanced is not None else raw_det_dir)

    raw_dets, raw_missing = _collect_detections(raw_det_dir, image_ids)
    enh_dets, enh_missing = _collect_detections(enh_det_dir, image_ids)

    # one ground truth, identical thresholds for both arms
    ground_truth = _load_ground_truth(Path(config.ground_truth_dir), image_ids)
    if not ground_truth:
        raise PipelineError(f"no ground-truth boxes found under {config.ground_truth_dir}")
    raw_report = evaluate(raw_dets, ground_truth, config.iou_thresh, config.conf_thresh)
    enh_report = evaluate(enh_dets, ground_truth, config.iou_thresh, config.conf_thresh)

    delta_ap = {
        cid: enh_report.per_class[cid].ap - raw_report.per_class[cid].ap
        for cid in raw_report.per_class
        if raw_report.per_class[cid].ap is not None
        and cid in enh_report.per_class
        and enh_report.per_class[cid].ap is not None
    }
    delta_map = enh_report.map_value - raw_report.map_value
    exit_code = 2 if (raw_missing or enh_missing) else 0
    report = ComparisonReport(
        raw=ArmScore(raw_report, raw_missing),
        enhanced=ArmScore(enh_report, enh_missing),
        delta_ap=delta_ap,
        delta_map=delta_map,
        routed=routed,
        quality=quality,
        exit_code=exit_code,
    )
    _write_outputs(report, out)
    return report


def _write_outputs(report: ComparisonReport, out: Path) -> None:
    write_report_csv(report.raw.report, out / "raw_report.csv")
    write_report_json(report.raw.report, out / "raw_report.json")
    (out / "raw_report.txt").write_text(report_table(report.raw.report) + "\n")
    write_report_csv(report.enhanced.report, out / "enhanced_report.csv")
    write_report_json(report.enhanced.report, out / "enhanced_report.json")
    (out / "enhanced_report.txt").write_text(report_table(report.enhanced.report) + "\n")
    (out / "delta.txt").write_text(delta_table(report) + "\n")
    (out / "delta.csv").write_text(
        "class_id,ap_raw,ap_enhanced,delta_ap\n"
        + "".join(
            f"{cid},{report.raw.report.per_class[cid].ap:.6f},"
            f"{report.enhanced.report.per_class[cid].ap:.6f},"
            f"{delta:.6f}\n"
            for cid, delta in sorted(report.delta_ap.items())
        )
        + f"map,{report.raw.report.map_value:.6f},"
          f"{report.enhanced.report.map_value:.6f},{report.delta_map:.6f}\n"
    )
    manifest = {
        "exit_code": report.exit_code,
        "routed": report.routed,
        "missing_detections": {
            "raw": report.raw.missing,
            "enhanced": report.enhanced.missing,
        },
        "quality": [
            {"image_id": q.image_id, "luminance": q.luminance,
             "blur": q.blur, "selected": q.selected}
            for q in report.quality
        ],
        "delta_map": report.delta_map,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
