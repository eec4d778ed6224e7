import numpy as np
import pytest

from xenad import formats, simgen
from xenad.core import distance_score
from xenad.simgen import ScenarioSpec, generate_dataset, generate_video


def test_deterministic():
    a = generate_video(ScenarioSpec(seed=1))
    b = generate_video(ScenarioSpec(seed=1))
    assert len(a.tracks) == len(b.tracks)
    for ta, tb in zip(a.tracks, b.tracks):
        assert ta.first_frame == tb.first_frame
        np.testing.assert_array_equal(ta.boxes, tb.boxes)


def test_normal_has_no_labels():
    v = generate_video(ScenarioSpec(seed=4))
    assert not v.frame_labels.any() and v.category == "normal"


def test_zero_objects_gives_empty_video():
    assert generate_video(ScenarioSpec(num_objects=0)).tracks == ()


@pytest.mark.parametrize("kind", ["pair_collision", "zigzag", "sudden_stop"])
def test_labels_mark_interval(kind):
    spec = ScenarioSpec(seed=2, anomaly_kind=kind, anomaly_start_frac=0.4, anomaly_end_frac=0.7)
    v = generate_video(spec)
    assert np.flatnonzero(v.frame_labels).tolist() == list(range(60, 105))
    assert v.involvement == "non-ego" and v.category == simgen.KIND_CATEGORY[kind]


@pytest.mark.parametrize("seed", range(10))
def test_collision_brings_pair_together(seed):
    v = generate_video(ScenarioSpec(seed=seed, anomaly_kind="pair_collision"))
    a, b = v.tracks[0].boxes, v.tracks[1].boxes
    start, stop = ScenarioSpec(anomaly_kind="pair_collision").interval()
    ds = [distance_score(a[t : t + 1], b[t : t + 1]) for t in range(start, stop + 1)]
    assert min(ds) < distance_score(a[:1], b[:1])
    assert min(ds) < 0  # overlapping end state


@pytest.mark.parametrize("seed", range(10))
def test_noiseless_second_difference_bounded(seed):
    # with constant speed and heading rate omega, |c[t+1] - 2c[t] + c[t-1]| <= speed * omega
    spec = ScenarioSpec(seed=seed, noise_std=0.0, growth_rate=0.0, perspective=False)
    v = generate_video(spec)
    for tr in v.tracks:
        d2 = np.abs(np.diff(tr.boxes[:, :2], n=2, axis=0)).max()
        assert d2 <= spec.max_speed * spec.turn_rate + 1e-15


@pytest.mark.parametrize("seed", range(10))
def test_zigzag_kinematic_contrast(seed):
    spec = ScenarioSpec(seed=seed, noise_std=0.0, anomaly_kind="zigzag")
    v = generate_video(spec)
    d2 = np.abs(np.diff(v.tracks[0].boxes[:, :2], n=2, axis=0)).sum(axis=1)
    lab = v.frame_labels[1:-1].astype(bool)  # d2[k] is centred on frame k + 1
    assert d2[lab].mean() > d2[~lab].mean()


def test_sudden_stop_freezes():
    spec = ScenarioSpec(seed=3, noise_std=0.0, anomaly_kind="sudden_stop")
    boxes = generate_video(spec).tracks[0].boxes
    start, _ = spec.interval()
    assert np.all(boxes[start:] == boxes[start])
    assert np.any(boxes[start - 1] != boxes[start - 2])


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(anomaly_start_frac=0.5, anomaly_end_frac=0.5)
    with pytest.raises(ValueError):
        ScenarioSpec(noise_std=-1.0)
    with pytest.raises(ValueError):
        ScenarioSpec(anomaly_kind="explode")
    with pytest.raises(ValueError, match="needs at least 2"):
        generate_video(ScenarioSpec(num_objects=1, anomaly_kind="pair_collision"))


def test_dataset_all_normal(tmp_path):
    train, test = generate_dataset(10, 10, {}, seed=7, out_dir=tmp_path, num_frames=20)
    files = list((tmp_path / "train").iterdir()) + list((tmp_path / "test").iterdir())
    assert len(train) == len(test) == 10
    assert len(formats.list_videos(tmp_path / "train")) + len(formats.list_videos(tmp_path / "test")) == 20
    assert len(files) == 40  # track file + sidecar each
    assert all(not v.frame_labels.any() for v in train + test)


def test_dataset_mix_counts():
    _, test = generate_dataset(1, 100, {"pair_collision": 0.2, "zigzag": 0.15, "sudden_stop": 0.15},
                               seed=3, num_frames=20)
    kinds = [v.category for v in test]
    assert abs(sum(k != "normal" for k in kinds) - 50) <= 1
    assert abs(kinds.count("OC-N") - 20) <= 1


def test_dataset_files_reproducible(tmp_path):
    generate_dataset(3, 4, {"zigzag": 0.5}, seed=9, out_dir=tmp_path / "a", num_frames=30)
    generate_dataset(3, 4, {"zigzag": 0.5}, seed=9, out_dir=tmp_path / "b", num_frames=30)
    for p in sorted((tmp_path / "a").rglob("*.*")):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_scene_scores_level_and_shift():
    v = generate_video(ScenarioSpec(seed=1, anomaly_kind="zigzag", num_frames=400))
    ffp, str_ = simgen.synth_scene_scores(v, seed=0)
    assert ffp.valid_from == 4 and str_.valid_from == 3
    assert np.all(ffp.scores[:4] == -30.0)
    assert abs(ffp.scores[4:].mean() + 30.0) < 0.3
    up, _ = simgen.synth_scene_scores(v, seed=0, delta=3.0)
    lab = v.frame_labels.astype(bool)
    np.testing.assert_allclose((up.scores - ffp.scores)[lab], 4.5)
