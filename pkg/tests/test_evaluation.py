import json

import numpy as np
import pytest

from ebnet import evaluation as ev
from ebnet.errors import EmptyAttention, EmptyCategory, EmptyProposal, ParseError
from ebnet.evaluation import DatasetEntry, GroundTruthRegion, ScoredBox
from ebnet.imageio import write_image, write_mask


def peak_map(h, w, y, x):
    m = np.zeros((h, w))
    m[y, x] = 1.0
    return m


class TestPointing:
    def test_hit_inside_box(self):
        r = GroundTruthRegion("cat", bbox=(10, 10, 20, 20))
        assert ev.pointing_hit(peak_map(64, 64, 15, 15), [r])

    @pytest.mark.parametrize("dx,hit", [(15, True), (16, False)])
    def test_margin_boundary(self, dx, hit):
        r = GroundTruthRegion("cat", bbox=(10, 10, 20, 20))
        assert ev.pointing_hit(peak_map(64, 64, 15, 20 + dx), [r], 15) is hit

    def test_mask_margin_is_chebyshev(self):
        mask = np.zeros((64, 64), bool)
        mask[30, 30] = True
        r = GroundTruthRegion("cat", mask=mask)
        assert ev.pointing_hit(peak_map(64, 64, 45, 45), [r], 15)
        assert not ev.pointing_hit(peak_map(64, 64, 46, 45), [r], 15)

    def test_argmax_tie_first(self):
        assert ev.argmax_point(np.ones((3, 4))) == (0, 0)

    def test_any_instance_counts(self):
        regions = [GroundTruthRegion("dog", bbox=(0, 0, 3, 3)),
                   GroundTruthRegion("dog", bbox=(50, 50, 60, 60))]
        assert ev.pointing_hit(peak_map(64, 64, 55, 55), regions, 0)

    def test_game_accuracy(self):
        res = ev.pointing_game([("a", True), ("a", False), ("b", True)])
        assert res["per_category"] == {"a": 0.5, "b": 1.0}
        assert res["mean_accuracy"] == 0.75

    def test_empty_category(self):
        with pytest.raises(EmptyCategory):
            ev.pointing_game([("a", True)], ["a", "b"])


class TestDifficult:
    def entry(self, area_box, others):
        regions = [GroundTruthRegion("t", bbox=area_box)]
        regions += [GroundTruthRegion(c, bbox=(0, 0, 1, 1)) for c in others]
        return DatasetEntry("img.ppm", regions, size=(20, 20))

    def test_small_with_distracter(self):
        assert ev.is_difficult(self.entry((0, 0, 8, 9), ["d"]), "t")  # 90 px < 100

    def test_quarter_is_not_small(self):
        assert not ev.is_difficult(self.entry((0, 0, 9, 9), ["d"]), "t")  # exactly 100

    def test_no_distracter(self):
        assert not ev.is_difficult(self.entry((0, 0, 2, 2), []), "t")

    def test_union_area(self):
        e = DatasetEntry("x", [GroundTruthRegion("t", bbox=(0, 0, 9, 9)),
                               GroundTruthRegion("t", bbox=(5, 5, 14, 14))], size=(20, 20))
        assert ev.category_area(e, "t") == 175

    def test_filter_keeps_pairs(self):
        m = ev.DatasetManifest([self.entry((0, 0, 2, 2), ["d"]), self.entry((0, 0, 2, 2), [])],
                               ["d", "t"])
        kept = ev.filter_difficult(m)
        assert len(kept.entries) == 1
        # both are small and each is the other one's distracter
        assert kept.entries[0].target_categories == ["d", "t"]


class TestBoxes:
    def test_iou_inclusive(self):
        assert ev.iou((0, 0, 9, 9), (0, 0, 9, 9)) == 1.0
        assert ev.iou((0, 0, 9, 9), (5, 0, 14, 9)) == pytest.approx(50 / 150)
        assert ev.iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0

    def test_extract_bbox(self):
        m = np.zeros((10, 10))
        m[2:5, 3:8] = 1.0
        m[0, 0] = 0.05
        assert ev.extract_bbox(m, 1.0) == (3, 2, 7, 4)
        assert ev.extract_bbox(m, 0.0) == (0, 0, 7, 4)

    def test_extract_bbox_empty(self):
        with pytest.raises(EmptyAttention):
            ev.extract_bbox(np.zeros((4, 4)), 1.0)

    def test_localization_error(self):
        err = ev.localization_error([(0, 0, 9, 9), None, (0, 0, 2, 2)],
                                    [[(0, 0, 9, 9)], [(0, 0, 1, 1)], [(5, 5, 9, 9)]])
        assert err == pytest.approx(2 / 3)


class TestSegments:
    def test_score_formula(self):
        m = np.zeros((10, 10))
        m[0:2, 0:2] = 1.0
        small, big = (0, 0, 1, 1), (0, 0, 3, 3)
        out = ev.score_segments(m, [big, small], 0.5)
        assert out[0].bbox == small and out[0].score == pytest.approx(4 / 2)
        assert out[1].score == pytest.approx(4 / 4)
        # gamma = 0 ignores area: equal mass keeps input order
        assert [s.bbox for s in ev.score_segments(m, [big, small], 0.0)] == [big, small]

    def test_mask_proposal(self):
        m = np.ones((6, 6))
        mask = np.zeros((6, 6), bool)
        mask[1, 1:4] = True
        (s,) = ev.score_segments(m, [mask], 1.0)
        assert s.bbox == (1, 1, 3, 1) and s.score == pytest.approx(1.0)

    def test_empty_proposal(self):
        with pytest.raises(EmptyProposal):
            ev.score_segments(np.ones((4, 4)), [np.zeros((4, 4), bool)], 0.5)

    def test_nms_suppresses_at_threshold(self):
        a = ScoredBox((0, 0, 9, 9), 1.0)
        b = ScoredBox((0, 0, 9, 6), 0.9)  # iou 0.7 exactly
        c = ScoredBox((20, 20, 25, 25), 0.5)
        assert ev.iou(a.bbox, b.bbox) == pytest.approx(0.7)
        assert ev.nms([c, b, a], 0.7) == [a, c]

    def test_recall(self):
        boxes = [ScoredBox((0, 0, 3, 3), 2.0), ScoredBox((10, 10, 19, 19), 1.0)]
        assert ev.recall_at_k(boxes, [(10, 10, 19, 19)], 1) == 0
        assert ev.recall_at_k(boxes, [(10, 10, 19, 19)], 2) == 1


class TestManifest:
    def test_load_relative_paths(self, tmp_path):
        write_image(tmp_path / "a.ppm", np.zeros((3, 8, 6)))
        mask = np.zeros((8, 6), bool)
        mask[2:4, 1:3] = True
        write_mask(tmp_path / "m.pgm", mask)
        lines = [{"image": "a.ppm", "regions": [{"category": "x", "bbox": [0, 0, 2, 2]},
                                                {"category": "y", "mask_path": "m.pgm"}],
                  "map": "a.ebmap"}]
        (tmp_path / "ds.jsonl").write_text("\n".join(json.dumps(l) for l in lines))
        man = ev.load_manifest(tmp_path / "ds.jsonl")
        e = man.entries[0]
        assert man.categories == ["x", "y"]
        assert e.image == str(tmp_path / "a.ppm")
        assert e.extra["map"] == str(tmp_path / "a.ebmap")
        assert e.image_size() == (8, 6)
        assert ev.category_area(e, "y") == 4

    def test_bad_entry(self, tmp_path):
        (tmp_path / "ds.jsonl").write_text('{"regions": []}\n')
        with pytest.raises(ParseError):
            ev.load_manifest(tmp_path / "ds.jsonl")

    def test_unknown_category(self, tmp_path):
        (tmp_path / "ds.jsonl").write_text(json.dumps(
            {"image": "a.ppm", "regions": [{"category": "z", "bbox": [0, 0, 1, 1]}]}))
        with pytest.raises(ParseError):
            ev.load_manifest(tmp_path / "ds.jsonl", categories=["x"])

    def test_proposals(self, tmp_path):
        (tmp_path / "p.jsonl").write_text(json.dumps(
            {"image": "a.ppm", "segments": [[0, 0, 3, 3], {"bbox": [1, 1, 2, 2]}]}))
        props = ev.load_proposals(tmp_path / "p.jsonl")
        assert props[str(tmp_path / "a.ppm")] == [(0, 0, 3, 3), (1, 1, 2, 2)]
