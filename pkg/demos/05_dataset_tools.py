"""Annotation parsing, normalized-box conversion, PPM io, quality scoring."""

import tempfile
from pathlib import Path

import numpy as np

from signlight.datasets import (
    Category,
    decode_ppm,
    encode_ppm,
    group_class,
    laplacian_variance,
    mean_luminance,
    parse_gtsrb_csv,
    parse_yolo_line,
    select_low_quality,
    to_yolo_line,
    write_yolo_annotations,
)
from signlight.engine import Tensor

# per-image csv with a header, semicolon separated, pixel corner boxes
csv_text = """Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId
00000.ppm;29;30;5;6;24;25;0
00001.ppm;63;62;6;5;57;56;17
bad line;;;;;;
"""
result = parse_gtsrb_csv(csv_text)
print("parsed", len(result.annotations), "rows,", len(result.issues), "rejected")
for issue in result.issues:
    print("  line", issue.line_no, "->", issue.reason)

# each annotation becomes one normalized "class cx cy w h" line
ann = result.annotations[0]
line = to_yolo_line(ann)
print("yolo line:", line)
cid, box = parse_yolo_line(line, ann.image_w, ann.image_h)
print("round trip keeps class", cid, "and corners within half a pixel:",
      abs(box.x_min - ann.box.x_min) <= 0.5)

# the 43 sign classes fold into four coarse groups
print("class 17 is", group_class(17).name.lower(),
      "and class 11 is", group_class(11).name.lower())
print("groups:", [c.name.lower() for c in Category])

work = Path(tempfile.mkdtemp())
written = write_yolo_annotations(result.annotations, work / "labels", broad=False)
print("label files:", sorted(p.name for p in written))

# binary ppm encodes rounded 8-bit rgb; decode inverts it exactly
rng = np.random.default_rng(3)
image = Tensor(np.round(rng.uniform(0, 1, (1, 3, 8, 8)) * 255) / 255.0)
again = decode_ppm(encode_ppm(image))
print("ppm round-trips 8-bit data exactly:", np.array_equal(image.data, again.data))

# the quality screen flags frames that are dark or blurry
dark = Tensor.full((1, 3, 16, 16), 0.05)
sharp = Tensor(np.kron(rng.integers(0, 2, (1, 3, 8, 8)), np.ones((1, 1, 2, 2))).astype(float))
print(f"dark frame: luminance {mean_luminance(dark):.3f}, "
      f"blur {laplacian_variance(dark):.1f}")
print(f"sharp frame: luminance {mean_luminance(sharp):.3f}, "
      f"blur {laplacian_variance(sharp):.1f}")
picked = select_low_quality([("dark", dark), ("sharp", sharp)])
print("flagged as low quality:", [s.image_id for s in picked if s.selected])
