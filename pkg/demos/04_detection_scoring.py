"""Score a toy detection run: IoU, per-class AP, and the report table."""

from signlight.evaluation import (
    BBox,
    Detection,
    GroundTruth,
    average_precision,
    bbox_from_center,
    evaluate,
    iou,
    report_table,
)

# two unit squares sharing a third of their union
print("iou of offset squares:", iou(BBox(0, 0, 2, 2), BBox(1, 0, 3, 2)))

# classic worked example: three detections, two ground truths
left = BBox(0.0, 0.0, 0.4, 0.4)
right = BBox(0.6, 0.6, 0.9, 0.9)
stray = BBox(0.1, 0.6, 0.3, 0.9)
dets = [
    Detection("frame", 0, 0.9, left),    # hit
    Detection("frame", 0, 0.8, stray),   # miss
    Detection("frame", 0, 0.7, right),   # hit
]
gts = [GroundTruth("frame", 0, left), GroundTruth("frame", 0, right)]
print(f"average precision: {average_precision(dets, gts, 0.5):.4f}  (5/6 expected)")

# a small two-class scene end to end
gts = [
    GroundTruth("a", 1, bbox_from_center(0.3, 0.3, 0.2, 0.2)),
    GroundTruth("a", 1, bbox_from_center(0.7, 0.7, 0.2, 0.2)),
    GroundTruth("b", 14, bbox_from_center(0.5, 0.5, 0.4, 0.4)),
]
dets = [
    Detection("a", 1, 0.95, bbox_from_center(0.3, 0.3, 0.2, 0.2)),
    Detection("a", 1, 0.40, bbox_from_center(0.9, 0.1, 0.1, 0.1)),  # low-conf miss
    Detection("b", 14, 0.88, bbox_from_center(0.52, 0.5, 0.4, 0.4)),
]
report = evaluate(dets, gts, iou_thresh=0.5, conf_thresh=0.5)
print()
print(report_table(report))
