"""Detection scoring: IoU, greedy matching, all-points AP, mAP, P/R/F1.

Detections and ground truth travel through small frozen records. Matching
is done per class and per image: detections in descending confidence each
claim the unmatched ground-truth box of highest IoU at or above the
threshold, and a ground-truth box is claimed at most once. AP integrates
the exact precision envelope over recall (all-points interpolation, not
the 11-point variant). mAP averages AP over classes that have at least one
ground-truth box.

Text formats, one file per image, whitespace-separated and normalised to
[0, 1]:

    detections:   class_id confidence cx cy w h
    ground truth: class_id cx cy w h
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "BBox",
    "Detection",
    "GroundTruth",
    "ClassResult",
    "EvalReport",
    "iou",
    "match_detections",
    "average_precision",
    "ap_from_tp_flags",
    "evaluate",
    "bbox_from_center",
    "parse_detections",
    "parse_ground_truth",
    "read_detections_file",
    "read_ground_truth_file",
    "format_detection_line",
    "report_table",
    "write_report_csv",
    "write_report_json",
]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with x_min < x_max and y_min < y_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    confidence: float
    box: BBox

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_id: int
    box: BBox


@dataclass(frozen=True)
class ClassResult:
    """Per-class scoreboard; ap is None for classes with no ground truth."""

    ap: float | None
    tp: int
    fp: int
    fn: int
    n_gt: int


@dataclass(frozen=True)
class EvalReport:
    per_class: dict[int, ClassResult]
    map_value: float
    precision: float
    recall: float
    f1: float
    avg_iou: float
    iou_thresh: float
    conf_thresh: float


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area, 0 for disjoint boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def match_detections(
    detections: Sequence[Detection],
    ground_truth: Sequence[GroundTruth],
    iou_thresh: float,
) -> list[tuple[Detection, bool, float]]:
    """Greedy confidence-descending matching within one class.

    Returns (detection, is_tp, matched_iou) triples in match order. All
    records must share one class id. Ties in confidence keep input order;
    ties in IoU keep the earliest ground-truth box.
    """
    classes = {d.class_id for d in detections} | {g.class_id for g in ground_truth}
    if len(classes) > 1:
        raise ValueError(f"match_detections got mixed classes {sorted(classes)}")
    by_image: dict[str, list[int]] = {}
    for idx, gt in enumerate(ground_truth):
        by_image.setdefault(gt.image_id, []).append(idx)
    taken = [False] * len(ground_truth)
    ordered = sorted(enumerate(detections), key=lambda kv: (-kv[1].confidence, kv[0]))

    results = []
    for _, det in ordered:
        best_iou = 0.0
        best_idx = -1
        for idx in by_image.get(det.image_id, ()):
            if taken[idx]:
                continue
            value = iou(det.box, ground_truth[idx].box)
            if value > best_iou:
                best_iou = value
                best_idx = idx
        if best_idx >= 0 and best_iou >= iou_thresh:
            taken[best_idx] = True
            results.append((det, True, best_iou))
        else:
            results.append((det, False, 0.0))
    return results


def ap_from_tp_flags(flags: Sequence[bool], n_gt: int) -> float:
    """All-points AP from confidence-ordered TP flags and a GT count."""
    if n_gt < 1:
        raise ValueError("AP is undefined without ground truth")
    tp = 0
    points = []  # (recall, precision) after each detection
    for rank, flag in enumerate(flags, start=1):
        tp += int(flag)
        points.append((tp / n_gt, tp / rank))
    ap = 0.0
    prev_recall = 0.0
    best_after = 0.0
    # walk right to left so precision is the envelope max over recall >= r
    segments = []
    for recall, precision in reversed(points):
        best_after = max(best_after, precision)
        segments.append((recall, best_after))
    for recall, precision in reversed(segments):
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def average_precision(
    detections: Sequence[Detection],
    ground_truth: Sequence[GroundTruth],
    iou_thresh: float,
) -> float:
    """AP for one class at the given IoU threshold."""
    if not ground_truth:
        raise ValueError("AP is undefined without ground truth")
    matched = match_detections(detections, ground_truth, iou_thresh)
    return ap_from_tp_flags([tp for _, tp, _ in matched], len(ground_truth))


def evaluate(
    detections: Sequence[Detection],
    ground_truth: Sequence[GroundTruth],
    iou_thresh: float = 0.5,
    conf_thresh: float = 0.25,
) -> EvalReport:
    """Score detections against ground truth.

    AP per class uses every detection regardless of confidence; the
    TP/FP/FN counts, precision, recall, F1 and average IoU use only
    detections at or above ``conf_thresh``. Classes without ground truth
    keep their false positives but are excluded from mAP (ap None).
    """
    if not ground_truth:
        raise ValueError("evaluate needs at least one ground-truth box")
    class_ids = sorted({d.class_id for d in detections} | {g.class_id for g in ground_truth})
    per_class: dict[int, ClassResult] = {}
    ap_values = []
    tp_total = fp_total = gt_total = 0
    iou_sum = 0.0

    for cid in class_ids:
        dets = [d for d in detections if d.class_id == cid]
        gts = [g for g in ground_truth if g.class_id == cid]
        confident = [d for d in dets if d.confidence >= conf_thresh]
        matched = match_detections(confident, gts, iou_thresh)
        tp = sum(1 for _, flag, _ in matched if flag)
        fp = len(matched) - tp
        iou_sum += sum(value for _, flag, value in matched if flag)
        ap = ap_from_tp_flags(
            [flag for _, flag, _ in match_detections(dets, gts, iou_thresh)], len(gts)
        ) if gts else None
        per_class[cid] = ClassResult(ap, tp, fp, len(gts) - tp, len(gts))
        if ap is not None:
            ap_values.append(ap)
        tp_total += tp
        fp_total += fp
        gt_total += len(gts)

    precision = tp_total / (tp_total + fp_total) if tp_total + fp_total else 0.0
    recall = tp_total / gt_total
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    avg_iou = iou_sum / tp_total if tp_total else 0.0
    return EvalReport(
        per_class=per_class,
        map_value=sum(ap_values) / len(ap_values),
        precision=precision,
        recall=recall,
        f1=f1,
        avg_iou=avg_iou,
        iou_thresh=iou_thresh,
        conf_thresh=conf_thresh,
    )


# ---------------------------------------------------------------------------
# text formats


def bbox_from_center(cx: float, cy: float, w: float, h: float) -> BBox:
    return BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def _parse_lines(text: str, image_id: str, n_fields: int, path: str):
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != n_fields:
            raise ValueError(
                f"{path} line {line_no}: expected {n_fields} fields, got {len(fields)}"
            )
        try:
            yield line_no, [float(f) for f in fields]
        except ValueError as exc:
            raise ValueError(f"{path} line {line_no}: {exc}") from None


def parse_detections(text: str, image_id: str, path: str = "<detections>") -> list[Detection]:
    """Parse ``class_id confidence cx cy w h`` lines (normalised)."""
    out = []
    for line_no, vals in _parse_lines(text, image_id, 6, path):
        out.append(Detection(image_id, int(vals[0]), vals[1],
                             bbox_from_center(*vals[2:])))
    return out


def parse_ground_truth(text: str, image_id: str, path: str = "<ground truth>") -> list[GroundTruth]:
    """Parse ``class_id cx cy w h`` lines (normalised)."""
    out = []
    for line_no, vals in _parse_lines(text, image_id, 5, path):
        out.append(GroundTruth(image_id, int(vals[0]), bbox_from_center(*vals[1:])))
    return out


def read_detections_file(path: str | Path, image_id: str | None = None) -> list[Detection]:
    p = Path(path)
    return parse_detections(p.read_text(), image_id or p.stem, str(p))


def read_ground_truth_file(path: str | Path, image_id: str | None = None) -> list[GroundTruth]:
    p = Path(path)
    return parse_ground_truth(p.read_text(), image_id or p.stem, str(p))


def format_detection_line(det: Detection) -> str:
    b = det.box
    cx, cy = (b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0
    return (f"{det.class_id} {det.confidence:.6f} "
            f"{cx:.6f} {cy:.6f} {b.x_max - b.x_min:.6f} {b.y_max - b.y_min:.6f}")


# ---------------------------------------------------------------------------
# report output


def _class_label(cid: int, names: dict[int, str] | None) -> str:
    return names[cid] if names and cid in names else f"class_{cid}"


def report_table(report: EvalReport, names: dict[int, str] | None = None) -> str:
    """Human-readable scoreboard, one class per row plus a summary block."""
    rows = [("class", "ap", "tp", "fp", "fn", "gt")]
    for cid in sorted(report.per_class):
        r = report.per_class[cid]
        ap = "-" if r.ap is None else f"{100.0 * r.ap:.2f}%"
        rows.append((_class_label(cid, names), ap, str(r.tp), str(r.fp),
                     str(r.fn), str(r.n_gt)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    lines.append("")
    lines.append(
        f"mAP@{report.iou_thresh:.2f}: {100.0 * report.map_value:.2f}%   "
        f"precision: {report.precision:.4f}  recall: {report.recall:.4f}  "
        f"f1: {report.f1:.4f}  avg_iou: {report.avg_iou:.4f}  "
        f"(conf >= {report.conf_thresh:.2f})"
    )
    return "\n".join(lines)


def write_report_csv(report: EvalReport, path: str | Path,
                     names: dict[int, str] | None = None) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "class", "ap", "tp", "fp", "fn", "n_gt"])
        for cid in sorted(report.per_class):
            r = report.per_class[cid]
            writer.writerow([
                cid, _class_label(cid, names),
                "" if r.ap is None else f"{r.ap:.6f}",
                r.tp, r.fp, r.fn, r.n_gt,
            ])
        writer.writerow([])
        writer.writerow(["map", f"{report.map_value:.6f}",
                         "precision", f"{report.precision:.6f}",
                         "recall", f"{report.recall:.6f}",
                         "f1", f"{report.f1:.6f}",
                         "avg_iou", f"{report.avg_iou:.6f}"])


def write_report_json(report: EvalReport, path: str | Path,
                      names: dict[int, str] | None = None) -> None:
    payload = {
        "iou_thresh": report.iou_thresh,
        "conf_thresh": report.conf_thresh,
        "map": report.map_value,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "avg_iou": report.avg_iou,
        "classes": {
            str(cid): {
                "label": _class_label(cid, names),
                "ap": r.ap,
                "tp": r.tp,
                "fp": r.fp,
                "fn": r.fn,
                "n_gt": r.n_gt,
            }
            for cid, r in sorted(report.per_class.items())
        },
    }
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
