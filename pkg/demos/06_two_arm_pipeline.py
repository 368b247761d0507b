"""Run the two-arm comparison: detect on raw frames vs enhanced frames.

The detector here is a stub fed from json fixtures, standing in for any
external detector that reads an image directory and writes one detection
file per frame. The enhanced arm's fixture finds one extra sign, so the
delta report shows exactly what that hit is worth.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from signlight.datasets import write_image
from signlight.engine import Tensor
from signlight.network import NetConfig, init_model, save_checkpoint
from signlight.pipeline import PipelineConfig, delta_table, run_pipeline

work = Path(tempfile.mkdtemp())
rng = np.random.default_rng(0)

# two dark frames and their ground-truth boxes
images = work / "images"
images.mkdir()
for name in ("f0", "f1"):
    frame = Tensor(rng.uniform(0.0, 0.3, (1, 3, 12, 12)))
    write_image(frame, images / f"{name}.ppm")

gt = work / "gt"
gt.mkdir()
boxes = {
    "f0": [(0.25, 0.25, 0.2, 0.2), (0.75, 0.75, 0.2, 0.2)],
    "f1": [(0.25, 0.75, 0.2, 0.2), (0.75, 0.25, 0.2, 0.2)],
}
for name, rows in boxes.items():
    (gt / f"{name}.txt").write_text(
        "".join(f"0 {cx} {cy} {w} {h}\n" for cx, cy, w, h in rows))

# raw arm sees three of the four signs, enhanced arm sees all four
echo = {n: [[0, 0.9 - 0.1 * i, *row] for i, row in enumerate(rows)]
        for n, rows in boxes.items()}
raw_fixture = work / "raw.json"
raw_fixture.write_text(json.dumps({"f0": echo["f0"], "f1": echo["f1"][:1]}))
enh_fixture = work / "enh.json"
enh_fixture.write_text(json.dumps(echo))

# any checkpoint works; an untrained small net keeps the demo fast
ckpt = work / "model.ckpt"
save_checkpoint(init_model(NetConfig.small(seed=0)), ckpt)

report = run_pipeline(PipelineConfig(
    images_dir=images,
    ground_truth_dir=gt,
    output_dir=work / "out",
    checkpoint=ckpt,
    stub_fixture=raw_fixture,
    stub_fixture_enhanced=enh_fixture,
))

print(delta_table(report))
print()
print("per-class ap delta:", report.delta_ap)
print("frames routed through the enhancer:", report.routed)
print("outputs under", work / "out")
for path in sorted((work / "out").iterdir()):
    print("  ", path.name)
