import numpy as np
import pytest

from xenad import formats
from xenad.core import ScoreSeries
from xenad.simgen import ScenarioSpec, generate_video


def test_video_round_trip_is_exact(tmp_path):
    v = generate_video(ScenarioSpec(seed=5, anomaly_kind="zigzag", num_frames=40, late_entry_prob=1.0))
    formats.write_video(v, tmp_path)
    back = formats.read_video(tmp_path, v.video_id)
    assert back.category == v.category and back.num_frames == v.num_frames
    np.testing.assert_array_equal(back.frame_labels, v.frame_labels)
    for a, b in zip(v.tracks, back.tracks):
        assert (a.object_id, a.first_frame) == (b.object_id, b.first_frame)
        np.testing.assert_array_equal(a.boxes, b.boxes)


def test_track_header_and_order(tmp_path):
    v = generate_video(ScenarioSpec(seed=1, num_frames=3, num_objects=2, late_entry_prob=0.0, video_id="v"))
    formats.write_video(v, tmp_path)
    lines = formats.track_path(tmp_path, "v").read_text().splitlines()
    assert lines[0] == "video_id,frame,object_id,cx,cy,w,h"
    assert [tuple(l.split(",")[1:3]) for l in lines[1:]] == [("0", "0"), ("0", "1"), ("1", "0"),
                                                              ("1", "1"), ("2", "0"), ("2", "1")]
    meta = formats.meta_path(tmp_path, "v").read_text()
    assert meta.index("fps") < meta.index("num_frames") < meta.index("frame_labels") < meta.index("category")


def test_bad_track_row_reports_line(tmp_path):
    v = generate_video(ScenarioSpec(seed=1, num_frames=3, video_id="v"))
    formats.write_video(v, tmp_path)
    p = formats.track_path(tmp_path, "v")
    lines = p.read_text().splitlines()
    lines[3] = lines[3].replace(",", ",x", 1)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(formats.FormatError, match=r":4:"):
        formats.read_video(tmp_path, "v")


def test_scores_round_trip(tmp_path):
    s = ScoreSeries("vid", np.array([0.1, 1 / 3, -2e-300, 7.0]), 2)
    formats.write_scores(s, tmp_path / "vid.csv")
    back = formats.read_scores(tmp_path / "vid.csv")
    assert back.video_id == "vid" and back.valid_from == 2
    np.testing.assert_array_equal(back.scores, s.scores)


def test_missing_frame_is_named(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text("# valid_from=0\nvideo_id,frame,score\nv,0,1.0\nv,2,1.0\n")
    with pytest.raises(formats.FormatError, match="missing frame 1"):
        formats.read_scores(p)


def test_wrong_header(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text("video,frame,score\nv,0,1.0\n")
    with pytest.raises(formats.FormatError, match="expected header"):
        formats.read_scores(p)


def test_fused_round_trip(tmp_path, rng):
    states = rng.normal(size=(6, 5))
    formats.write_fused("v", states[:, 4], states, 3, tmp_path / "v.csv")
    series, back = formats.read_fused(tmp_path / "v.csv")
    assert series.valid_from == 3
    np.testing.assert_array_equal(back, states)
