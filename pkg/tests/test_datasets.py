"""Dataset tooling tests: annotation parsers, YOLO text export, category
grouping, the PPM codec, and the quality selector.
"""

import numpy as np
import pytest

from signlight.engine import ShapeError, Tensor
from signlight.evaluation import BBox
from signlight.datasets import (
    CATEGORY_CLASS_IDS,
    GTSRB_HEADER,
    Annotation,
    Category,
    FormatError,
    decode_ppm,
    encode_ppm,
    group_class,
    laplacian_variance,
    mean_luminance,
    parse_gtsdb_gt,
    parse_gtsrb_csv,
    parse_yolo_line,
    read_image,
    select_low_quality,
    to_yolo_line,
    write_image,
    write_yolo_annotations,
)

GTSRB_HEAD = ";".join(GTSRB_HEADER)


# ---------------------------------------------------------------------------
# categories


class TestCategories:
    def test_partition_sizes(self):
        sizes = {cat: len(ids) for cat, ids in CATEGORY_CLASS_IDS.items()}
        assert sizes == {
            Category.PROHIBITORY: 12,
            Category.DANGER: 15,
            Category.MANDATORY: 8,
            Category.OTHER: 8,
        }

    def test_partition_is_exact(self):
        seen = set()
        for ids in CATEGORY_CLASS_IDS.values():
            assert not (seen & ids)
            seen |= ids
        assert seen == set(range(43))

    def test_group_class_agrees_with_table(self):
        for cat, ids in CATEGORY_CLASS_IDS.items():
            for cid in ids:
                assert group_class(cid) is cat

    def test_spot_checks(self):
        assert group_class(0) is Category.PROHIBITORY
        assert group_class(16) is Category.PROHIBITORY
        assert group_class(11) is Category.DANGER
        assert group_class(31) is Category.DANGER
        assert group_class(33) is Category.MANDATORY
        assert group_class(40) is Category.MANDATORY
        for cid in (6, 12, 13, 14, 17, 32, 41, 42):
            assert group_class(cid) is Category.OTHER

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            group_class(43)
        with pytest.raises(ValueError):
            group_class(-1)


# ---------------------------------------------------------------------------
# annotation parsing


class TestParseGtsrb:
    def test_reference_row(self):
        text = GTSRB_HEAD + "\n00000.ppm;29;30;5;6;24;25;0\n"
        result = parse_gtsrb_csv(text)
        assert result.issues == [] and result.clamped == 0
        (a,) = result.annotations
        assert a.filename == "00000.ppm"
        assert (a.image_w, a.image_h) == (29, 30)
        assert a.box == BBox(5.0, 6.0, 24.0, 25.0)
        assert a.class_id == 0

    def test_header_is_mandatory(self):
        with pytest.raises(FormatError, match="header"):
            parse_gtsrb_csv("00000.ppm;29;30;5;6;24;25;0\n")

    def test_empty_file(self):
        with pytest.raises(FormatError, match="empty"):
            parse_gtsrb_csv("")

    def test_header_whitespace_tolerated(self):
        text = ";".join(f" {h} " for h in GTSRB_HEADER) + "\n"
        assert parse_gtsrb_csv(text).annotations == []

    def test_bad_rows_become_issues(self):
        rows = [
            GTSRB_HEAD,
            "a.ppm;40;40;5;5;30;30;7",      # fine
            "b.ppm;40;40;5;5;30",           # missing fields
            "c.ppm;40;40;x;5;30;30;7",      # bad number
            "d.ppm;40;40;5;5;30;30;99",     # class out of range
            "e.ppm;40;40;30;5;5;30;7",      # x2 < x1
            "f.ppm;40;40;6;6;31;31;12",     # fine
        ]
        result = parse_gtsrb_csv("\n".join(rows) + "\n")
        assert [a.filename for a in result.annotations] == ["a.ppm", "f.ppm"]
        assert [i.line_no for i in result.issues] == [3, 4, 5, 6]
        assert "8 fields" in result.issues[0].reason
        assert result.issues[0].line == "b.ppm;40;40;5;5;30"

    def test_blank_lines_skipped(self):
        text = GTSRB_HEAD + "\n\na.ppm;40;40;5;5;30;30;7\n\n"
        result = parse_gtsrb_csv(text)
        assert len(result.annotations) == 1 and not result.issues

    def test_out_of_image_boxes_clamped(self):
        text = GTSRB_HEAD + "\na.ppm;29;30;-2;6;35;25;0\nb.ppm;29;30;5;6;24;25;0\n"
        result = parse_gtsrb_csv(text)
        assert result.clamped == 1
        assert result.annotations[0].box == BBox(0.0, 6.0, 29.0, 25.0)
        assert result.annotations[1].box == BBox(5.0, 6.0, 24.0, 25.0)


class TestParseGtsdb:
    def test_reference_line(self):
        result = parse_gtsdb_gt("00001.ppm;774;411;815;446;11\n")
        (a,) = result.annotations
        assert a.filename == "00001.ppm"
        assert (a.image_w, a.image_h) == (1360, 800)
        assert a.box == BBox(774.0, 411.0, 815.0, 446.0)
        assert a.class_id == 11

    def test_no_header_expected(self):
        result = parse_gtsdb_gt("a.ppm;1;2;5;9;3\nb.ppm;10;10;20;30;40\n")
        assert len(result.annotations) == 2 and not result.issues

    def test_bad_lines_become_issues(self):
        text = "a.ppm;1;2;5;9;3\nbogus line\nb.ppm;1;2;5;9;77\n"
        result = parse_gtsdb_gt(text)
        assert [a.filename for a in result.annotations] == ["a.ppm"]
        assert [i.line_no for i in result.issues] == [2, 3]

    def test_clamps_to_frame(self):
        result = parse_gtsdb_gt("a.ppm;1350;790;1400;830;5\n")
        assert result.clamped == 1
        assert result.annotations[0].box == BBox(1350.0, 790.0, 1360.0, 800.0)

    def test_custom_image_size(self):
        result = parse_gtsdb_gt("a.ppm;0;0;5;5;1\n", image_size=(10, 20))
        assert (result.annotations[0].image_w, result.annotations[0].image_h) == (10, 20)


# ---------------------------------------------------------------------------
# yolo text


class TestYoloLines:
    def test_reference_line(self):
        a = Annotation("x.ppm", 100, 100, BBox(10, 20, 30, 60), 2)
        assert to_yolo_line(a) == "2 0.200000 0.400000 0.200000 0.400000"

    def test_full_image_box(self):
        a = Annotation("x.ppm", 64, 32, BBox(0, 0, 64, 32), 9)
        assert to_yolo_line(a) == "9 0.500000 0.500000 1.000000 1.000000"

    def test_broad_uses_category_index(self):
        box = BBox(10, 10, 20, 20)
        cases = {0: 0, 11: 1, 33: 2, 12: 3}  # prohibitory, danger, mandatory, other
        for cid, broad_id in cases.items():
            a = Annotation("x.ppm", 100, 100, box, cid)
            assert to_yolo_line(a, broad=True).split()[0] == str(broad_id)
            assert to_yolo_line(a).split()[0] == str(cid)

    def test_parse_inverts(self):
        cid, box = parse_yolo_line("2 0.200000 0.400000 0.200000 0.400000", 100, 100)
        assert cid == 2
        assert box.x_min == pytest.approx(10, abs=1e-9)
        assert box.y_min == pytest.approx(20, abs=1e-9)
        assert box.x_max == pytest.approx(30, abs=1e-9)
        assert box.y_max == pytest.approx(60, abs=1e-9)

    def test_parse_field_count(self):
        with pytest.raises(FormatError):
            parse_yolo_line("2 0.5 0.5 0.1", 100, 100)

    def test_round_trip_against_quantisation_bound(self):
        rng = np.random.default_rng(110)
        for _ in range(200):
            w, h = int(rng.integers(20, 1400)), int(rng.integers(20, 900))
            x1 = float(rng.uniform(0, w - 2))
            y1 = float(rng.uniform(0, h - 2))
            a = Annotation(
                "r.ppm", w, h,
                BBox(x1, y1, float(rng.uniform(x1 + 1, w)), float(rng.uniform(y1 + 1, h))),
                int(rng.integers(0, 43)),
            )
            cid, box = parse_yolo_line(to_yolo_line(a), w, h)
            assert cid == a.class_id
            for got, want in zip(
                (box.x_min, box.y_min, box.x_max, box.y_max),
                (a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max),
            ):
                # six decimals in normalised units stay far inside half a pixel
                assert abs(got - want) <= 0.01


class TestWriteYolo:
    def annotations(self):
        return [
            Annotation("00001.ppm", 100, 100, BBox(10, 10, 20, 20), 5),
            Annotation("00001.ppm", 100, 100, BBox(40, 40, 80, 90), 11),
            Annotation("00007.ppm", 100, 100, BBox(5, 5, 95, 95), 38),
        ]

    def test_per_image_files(self, tmp_path):
        written = write_yolo_annotations(self.annotations(), tmp_path)
        assert [p.name for p in written] == ["00001.txt", "00007.txt", "classes.names"]
        lines = (tmp_path / "00001.txt").read_text().splitlines()
        assert lines == [
            to_yolo_line(self.annotations()[0]),
            to_yolo_line(self.annotations()[1]),
        ]

    def test_fine_class_names(self, tmp_path):
        write_yolo_annotations(self.annotations(), tmp_path)
        names = (tmp_path / "classes.names").read_text().splitlines()
        assert len(names) == 43
        assert names[0] == "class_00" and names[42] == "class_42"

    def test_broad_class_names(self, tmp_path):
        write_yolo_annotations(self.annotations(), tmp_path, broad=True)
        names = (tmp_path / "classes.names").read_text().splitlines()
        assert names == ["prohibitory", "danger", "mandatory", "other"]
        first = (tmp_path / "00001.txt").read_text().splitlines()[0]
        assert first.split()[0] == "0"  # class 5 is prohibitory


# ---------------------------------------------------------------------------
# ppm codec


def ppm_bytes(w, h, pixel_bytes):
    return f"P6\n{w} {h}\n255\n".encode() + pixel_bytes


class TestPpmCodec:
    def test_single_red_pixel(self):
        t = decode_ppm(ppm_bytes(1, 1, b"\xff\x00\x00"))
        assert t.dims == (1, 3, 1, 1)
        np.testing.assert_array_equal(
            t.data[0, :, 0, 0], np.array([1.0, 0.0, 0.0])
        )

    def test_decode_layout(self):
        # 2x1 image: left red, right blue; row-major rgb triplets
        t = decode_ppm(ppm_bytes(2, 1, b"\xff\x00\x00\x00\x00\xff"))
        assert t.dims == (1, 3, 1, 2)
        assert t.data[0, 0, 0, 0] == 1.0 and t.data[0, 2, 0, 1] == 1.0

    def test_round_trip_bytes(self):
        rng = np.random.default_rng(111)
        for _ in range(20):
            w, h = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            data = ppm_bytes(w, h, rng.integers(0, 256, w * h * 3, dtype=np.uint8).tobytes())
            assert encode_ppm(decode_ppm(data)) == data

    def test_header_variants_accepted(self):
        body = b"\x10" * 12
        for head in (b"P6 2 2 255 ", b"P6\t2\n2\r\n255\n", b"P6\n# note\n2 2\n255\n"):
            t = decode_ppm(head + body)
            assert t.dims == (1, 3, 2, 2)

    def test_encode_quantises_to_nearest_level(self):
        rng = np.random.default_rng(112)
        x = Tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        back = decode_ppm(encode_ppm(x))
        assert float(np.abs(back.data - x.data).max()) <= 0.5 / 255.0 + 1e-12

    def test_encode_clips(self):
        x = Tensor(np.array([[[[1.7]], [[-0.3]], [[0.5]]]]))
        assert encode_ppm(x) == ppm_bytes(1, 1, b"\xff\x00\x80")

    def test_wrong_magic(self):
        with pytest.raises(FormatError, match="header"):
            decode_ppm(b"P3\n1 1\n255\n1 2 3\n")

    def test_wrong_maxval(self):
        with pytest.raises(FormatError, match="maxval"):
            decode_ppm(b"P6\n1 1\n65535\n" + b"\x00" * 6)

    def test_truncated_names_byte(self):
        with pytest.raises(FormatError, match="truncated at byte"):
            decode_ppm(ppm_bytes(2, 2, b"\x00" * 11))

    def test_trailing_bytes(self):
        with pytest.raises(FormatError, match="trailing"):
            decode_ppm(ppm_bytes(1, 1, b"\x00" * 4))

    def test_encode_layout_enforced(self):
        with pytest.raises(ShapeError):
            encode_ppm(Tensor.zeros((2, 3, 2, 2)))
        with pytest.raises(ShapeError):
            encode_ppm(Tensor.zeros((1, 1, 2, 2)))


class TestImageFiles:
    def test_ppm_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(113)
        levels = rng.integers(0, 256, (1, 3, 5, 7)).astype(np.float64)
        x = Tensor(levels / 255.0)
        p = tmp_path / "img.ppm"
        write_image(x, p)
        np.testing.assert_array_equal(read_image(p).data, x.data)

    def test_png_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(114)
        levels = rng.integers(0, 256, (1, 3, 6, 4)).astype(np.float64)
        x = Tensor(levels / 255.0)
        p = tmp_path / "img.png"
        write_image(x, p)
        np.testing.assert_array_equal(read_image(p).data, x.data)

    def test_write_creates_parents(self, tmp_path):
        p = tmp_path / "a" / "b" / "img.ppm"
        write_image(Tensor.full((1, 3, 2, 2), 0.5), p)
        assert p.exists()


# ---------------------------------------------------------------------------
# quality screening


def gray(value, h=8, w=8):
    return Tensor.full((1, 3, h, w), value)


def checkerboard(scale=1.0, h=8, w=8):
    grid = (np.indices((h, w)).sum(0) % 2).astype(np.float64) * scale
    return Tensor(np.broadcast_to(grid, (1, 3, h, w)).copy())


class TestQuality:
    def test_white_luminance_is_exactly_one(self):
        assert mean_luminance(gray(1.0)) == 1.0
        assert mean_luminance(decode_ppm(ppm_bytes(2, 2, b"\xff" * 12))) == 1.0

    def test_black_scores_zero(self):
        assert mean_luminance(gray(0.0)) == 0.0
        assert laplacian_variance(gray(0.0)) == 0.0

    def test_channel_weights_ordered(self):
        def channel(i):
            arr = np.zeros((1, 3, 4, 4))
            arr[0, i] = 1.0
            return Tensor(arr)

        r, g, b = (mean_luminance(channel(i)) for i in range(3))
        assert r == pytest.approx(0.299, rel=1e-12)
        assert g == pytest.approx(0.587, rel=1e-12)
        assert b == pytest.approx(0.114, rel=1e-12)
        assert b < r < g

    def test_constant_image_has_zero_blur_score(self):
        assert laplacian_variance(gray(0.5)) == 0.0

    def test_linear_ramp_is_harmonic(self):
        row = np.linspace(0, 1, 9)[None, :]
        ramp = Tensor(np.broadcast_to(row, (1, 3, 9, 9)).copy())
        assert laplacian_variance(ramp) == pytest.approx(0.0, abs=1e-6)

    def test_tiny_images_score_zero_blur(self):
        assert laplacian_variance(gray(0.7, h=2, w=8)) == 0.0

    def test_checkerboard_blur_value(self):
        # interior responses alternate +-4*255 on the 8-bit scale
        assert laplacian_variance(checkerboard()) == pytest.approx(1040400.0, rel=1e-12)

    def test_selector_defaults(self):
        images = [
            ("dark", gray(0.05)),
            ("flat", gray(0.5)),
            ("sharp", checkerboard()),
            ("dark_sharp", checkerboard(scale=0.1)),
        ]
        scores = {s.image_id: s for s in select_low_quality(images)}
        assert scores["dark"].selected          # dim and flat
        assert scores["flat"].selected          # bright but blurry
        assert not scores["sharp"].selected     # bright and sharp
        assert scores["dark_sharp"].selected    # sharp but dim
        assert scores["sharp"].luminance == pytest.approx(0.5, rel=1e-12)
        assert scores["sharp"].blur == pytest.approx(1040400.0, rel=1e-12)

    def test_selector_thresholds_are_strict(self):
        scores = select_low_quality([("black", gray(0.0))],
                                    lum_thresh=0.0, blur_thresh=0.0)
        assert not scores[0].selected

    def test_selector_reports_everything(self):
        images = [(f"i{k}", gray(k / 10)) for k in range(5)]
        scores = select_low_quality(images)
        assert [s.image_id for s in scores] == [f"i{k}" for k in range(5)]
