"""Traffic-sign dataset tooling: annotation parsing, YOLO-style export,
broad-category grouping, a P6 PPM codec, and a low-quality image selector.

Supported inputs:

    GTSRB per-track CSV, semicolon-separated with header
        Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId
    GTSDB gt.txt, semicolon-separated, no header
        filename;x1;y1;x2;y2;classId

Malformed rows never vanish silently: each parse returns the good
annotations plus a list of per-line issues, and boxes that poke outside
the image are clamped with a count of how many needed it.
"""

from __future__ import annotations

import csv
import enum
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import ShapeError, Tensor
from .evaluation import BBox

__all__ = [
    "FormatError",
    "Annotation",
    "ParseIssue",
    "ParseResult",
    "Category",
    "CATEGORY_CLASS_IDS",
    "group_class",
    "parse_gtsrb_csv",
    "parse_gtsdb_gt",
    "to_yolo_line",
    "parse_yolo_line",
    "write_yolo_annotations",
    "decode_ppm",
    "encode_ppm",
    "read_image",
    "write_image",
    "mean_luminance",
    "laplacian_variance",
    "QualityScore",
    "select_low_quality",
]

GTSRB_HEADER = ["Filename", "Width", "Height", "Roi.X1", "Roi.Y1", "Roi.X2",
                "Roi.Y2", "ClassId"]
GTSDB_IMAGE_SIZE = (1360, 800)
N_CLASSES = 43


class FormatError(ValueError):
    """Input bytes or text do not follow the declared format."""


class Category(enum.Enum):
    PROHIBITORY = "prohibitory"
    DANGER = "danger"
    MANDATORY = "mandatory"
    OTHER = "other"


CATEGORY_CLASS_IDS: dict[Category, frozenset[int]] = {
    Category.PROHIBITORY: frozenset({0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 15, 16}),
    Category.DANGER: frozenset({11} | set(range(18, 32))),
    Category.MANDATORY: frozenset(range(33, 41)),
    Category.OTHER: frozenset({6, 12, 13, 14, 17, 32, 41, 42}),
}

_CLASS_TO_CATEGORY = {
    cid: cat for cat, ids in CATEGORY_CLASS_IDS.items() for cid in ids
}

_CATEGORY_INDEX = {cat: i for i, cat in enumerate(Category)}


def group_class(class_id: int) -> Category:
    """Map a fine class id (0..42) to its broad category."""
    try:
        return _CLASS_TO_CATEGORY[class_id]
    except KeyError:
        raise ValueError(f"class id {class_id} outside 0..{N_CLASSES - 1}") from None


@dataclass(frozen=True)
class Annotation:
    """One sign box in pixel corner coordinates within a known image size."""

    filename: str
    image_w: int
    image_h: int
    box: BBox
    class_id: int

    def __post_init__(self):
        if not 0 <= self.class_id < N_CLASSES:
            raise ValueError(f"class id {self.class_id} outside 0..{N_CLASSES - 1}")


@dataclass(frozen=True)
class ParseIssue:
    line_no: int
    line: str
    reason: str


@dataclass
class ParseResult:
    annotations: list[Annotation] = field(default_factory=list)
    issues: list[ParseIssue] = field(default_factory=list)
    clamped: int = 0


def _clamped_box(x1: float, y1: float, x2: float, y2: float,
                 img_w: int, img_h: int) -> tuple[BBox, bool]:
    cx1 = min(max(x1, 0.0), img_w)
    cy1 = min(max(y1, 0.0), img_h)
    cx2 = min(max(x2, 0.0), img_w)
    cy2 = min(max(y2, 0.0), img_h)
    box = BBox(cx1, cy1, cx2, cy2)  # raises on degenerate boxes
    return box, (cx1, cy1, cx2, cy2) != (x1, y1, x2, y2)


def parse_gtsrb_csv(text: str, path: str = "<gtsrb>") -> ParseResult:
    """Parse one per-track CSV; header row is mandatory.

    Rows with the wrong field count, non-numeric values, bad class ids or
    degenerate boxes become ParseIssues; boxes are clamped to the image
    with a running count.
    """
    reader = csv.reader(io.StringIO(text), delimiter=";")
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty file, expected header "
                          f"{';'.join(GTSRB_HEADER)}") from None
    if [h.strip() for h in header] != GTSRB_HEADER:
        raise FormatError(
            f"{path}: bad header {';'.join(header)!r}, expected "
            f"{';'.join(GTSRB_HEADER)}"
        )
    result = ParseResult()
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        raw = ";".join(row)
        if len(row) != 8:
            result.issues.append(ParseIssue(line_no, raw,
                                            f"expected 8 fields, got {len(row)}"))
            continue
        try:
            name = row[0].strip()
            img_w, img_h = int(row[1]), int(row[2])
            x1, y1, x2, y2 = (float(v) for v in row[3:7])
            class_id = int(row[7])
            box, clamped = _clamped_box(x1, y1, x2, y2, img_w, img_h)
            result.annotations.append(Annotation(name, img_w, img_h, box, class_id))
            result.clamped += int(clamped)
        except ValueError as exc:
            result.issues.append(ParseIssue(line_no, raw, str(exc)))
    return result


def parse_gtsdb_gt(text: str, path: str = "<gtsdb>",
                   image_size: tuple[int, int] = GTSDB_IMAGE_SIZE) -> ParseResult:
    """Parse a gt.txt of ``filename;x1;y1;x2;y2;classId`` lines (no header).

    The frame size is constant for the benchmark and passed as
    ``image_size`` (width, height).
    """
    img_w, img_h = image_size
    result = ParseResult()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(";")
        if len(fields) != 6:
            result.issues.append(ParseIssue(line_no, line,
                                            f"expected 6 fields, got {len(fields)}"))
            continue
        try:
            x1, y1, x2, y2 = (float(v) for v in fields[1:5])
            class_id = int(fields[5])
            box, clamped = _clamped_box(x1, y1, x2, y2, img_w, img_h)
            result.annotations.append(
                Annotation(fields[0].strip(), img_w, img_h, box, class_id)
            )
            result.clamped += int(clamped)
        except ValueError as exc:
            result.issues.append(ParseIssue(line_no, line, str(exc)))
    return result


def to_yolo_line(a: Annotation, broad: bool = False) -> str:
    """``class cx cy w h`` with centre/size normalised to 6 decimals.

    ``broad`` replaces the fine class id with the broad-category index
    (prohibitory 0, danger 1, mandatory 2, other 3).
    """
    cid = _CATEGORY_INDEX[group_class(a.class_id)] if broad else a.class_id
    cx = (a.box.x_min + a.box.x_max) / 2.0 / a.image_w
    cy = (a.box.y_min + a.box.y_max) / 2.0 / a.image_h
    w = (a.box.x_max - a.box.x_min) / a.image_w
    h = (a.box.y_max - a.box.y_min) / a.image_h
    return f"{cid} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}"


def parse_yolo_line(line: str, image_w: int, image_h: int) -> tuple[int, BBox]:
    """Invert to_yolo_line back to pixel corners for a known image size."""
    fields = line.split()
    if len(fields) != 5:
        raise FormatError(f"expected 5 fields in {line!r}, got {len(fields)}")
    cid = int(fields[0])
    cx, cy, w, h = (float(v) for v in fields[1:])
    return cid, BBox(
        (cx - w / 2.0) * image_w,
        (cy - h / 2.0) * image_h,
        (cx + w / 2.0) * image_w,
        (cy + h / 2.0) * image_h,
    )


def write_yolo_annotations(annotations: Iterable[Annotation], out_dir: str | Path,
                           broad: bool = False) -> list[Path]:
    """Write one .txt per image plus classes.names; returns written paths.

    Images without annotations simply get no file. Class names are the
    broad category names or generic ``class_NN`` labels.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_image: dict[str, list[str]] = {}
    for a in annotations:
        stem = Path(a.filename).stem
        per_image.setdefault(stem, []).append(to_yolo_line(a, broad))
    written = []
    for stem in sorted(per_image):
        p = out / f"{stem}.txt"
        p.write_text("\n".join(per_image[stem]) + "\n")
        written.append(p)
    names = ([cat.value for cat in Category] if broad
             else [f"class_{i:02d}" for i in range(N_CLASSES)])
    names_path = out / "classes.names"
    names_path.write_text("\n".join(names) + "\n")
    written.append(names_path)
    return written


# ---------------------------------------------------------------------------
# image io


def decode_ppm(data: bytes) -> Tensor:
    """Decode binary P6 PPM (maxval 255) to a (1, 3, h, w) tensor in [0, 1]."""
    m = re.match(
        rb"P6[ \t\r\n]+(?:#[^\n]*\n[ \t\r\n]*)*"
        rb"(\d+)[ \t\r\n]+(?:#[^\n]*\n[ \t\r\n]*)*"
        rb"(\d+)[ \t\r\n]+(?:#[^\n]*\n[ \t\r\n]*)*"
        rb"(\d+)[ \t\r\n]",
        data,
    )
    if not m:
        raise FormatError("not a binary P6 PPM header")
    w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}, only 255")
    offset = m.end()
    need = w * h * 3
    pixels = np.frombuffer(data, dtype=np.uint8, count=-1, offset=offset)
    if pixels.size < need:
        raise FormatError(
            f"PPM truncated at byte {offset + pixels.size}: "
            f"need {need} pixel bytes, have {pixels.size}"
        )
    if pixels.size > need:
        raise FormatError(f"PPM has {pixels.size - need} trailing bytes")
    arr = pixels.reshape(h, w, 3).transpose(2, 0, 1)[None].astype(np.float64) / 255.0
    return Tensor(arr)


def encode_ppm(image: Tensor) -> bytes:
    """Encode a (1, 3, h, w) tensor in [0, 1] as binary P6, maxval 255.

    decode -> encode reproduces the original bytes exactly.
    """
    if image.n != 1 or image.c != 3:
        raise ShapeError(f"encode_ppm needs (1, 3, h, w), got {image.dims}")
    levels = np.rint(np.clip(image.data[0], 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{image.w} {image.h}\n255\n".encode()
    return header + levels.transpose(1, 2, 0).tobytes()


def read_image(path: str | Path) -> Tensor:
    """Read a PPM or PNG file into a (1, 3, h, w) tensor in [0, 1]."""
    p = Path(path)
    data = p.read_bytes()
    if data[:2] == b"P6":
        return decode_ppm(data)
    from PIL import Image

    with Image.open(io.BytesIO(data)) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return Tensor(arr.transpose(2, 0, 1)[None] / 255.0)


def write_image(image: Tensor, path: str | Path) -> None:
    """Write a tensor as PPM or PNG depending on the file suffix."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if p.suffix.lower() == ".ppm":
        p.write_bytes(encode_ppm(image))
        return
    from PIL import Image

    levels = np.rint(np.clip(image.data[0], 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(levels.transpose(1, 2, 0)).save(p)


# ---------------------------------------------------------------------------
# quality screening

# weights normalised by their own float sum so an all-white image scores
# exactly 1.0; the per-pixel sum below uses the same association order
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114
_LUMA_NORM = (_LUMA_R + _LUMA_G) + _LUMA_B


def _luma(image: Tensor) -> np.ndarray:
    r, g, b = image.data[0]
    return ((_LUMA_R * r + _LUMA_G * g) + _LUMA_B * b) / _LUMA_NORM


def mean_luminance(image: Tensor) -> float:
    """Mean Rec.601 luma in [0, 1]."""
    return float(_luma(image).mean())


def laplacian_variance(image: Tensor) -> float:
    """Variance of the 4-neighbour Laplacian of luma on the 8-bit scale.

    Interior-only (valid) convolution; a constant image scores 0. Low
    values indicate little high-frequency content, a standard blur proxy.
    """
    luma = _luma(image) * 255.0
    h, w = luma.shape
    if h < 3 or w < 3:
        return 0.0
    core = (
        -4.0 * luma[1:-1, 1:-1]
        + luma[:-2, 1:-1]
        + luma[2:, 1:-1]
        + luma[1:-1, :-2]
        + luma[1:-1, 2:]
    )
    return float(core.var())


@dataclass(frozen=True)
class QualityScore:
    image_id: str
    luminance: float
    blur: float
    selected: bool


def select_low_quality(
    images: Iterable[tuple[str, Tensor]],
    lum_thresh: float = 0.25,
    blur_thresh: float = 50.0,
) -> list[QualityScore]:
    """Flag images worth enhancing: dark (mean luma below ``lum_thresh``)
    or blurry (Laplacian variance below ``blur_thresh``).

    A declared proxy for manual curation, not a reproduction of any
    particular hand-picked subset. Deterministic; scores are reported for
    every image so thresholds can be audited.
    """
    scores = []
    for image_id, image in images:
        lum = mean_luminance(image)
        blur = laplacian_variance(image)
        scores.append(
            QualityScore(image_id, lum, blur,
                         lum < lum_thresh or blur < blur_thresh)
        )
    return scores
