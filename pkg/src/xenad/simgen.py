"""Deterministic synthetic driving scenarios in normalized box space.

Normal objects move with constant speed along a gently turning heading while
their size drifts exponentially (approaching or receding). With
``perspective`` on, image-plane speed, detector jitter and anomaly
amplitudes scale with the object's apparent height relative to
``ref_height``: a pinhole camera maps world motion and box size through the
same inverse depth. Three non-ego anomaly patterns can be injected into a
labeled interval:

* ``pair_collision``: object 1 accelerates into object 0, both come to rest
  overlapping and shake for a moment (interactive).
* ``zigzag``: object 0 oscillates sideways at high frequency (individual).
* ``sudden_stop``: object 0 freezes in place for the rest of the video
  (individual). The labeled stretch is short: it covers the stop itself,
  not the object standing still afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import ScoreSeries, Track, VideoRecord
from .formats import write_video

ANOMALY_KINDS = ("none", "pair_collision", "zigzag", "sudden_stop")

# DoTA-style class tags for the injected kinds.
KIND_CATEGORY = {
    "none": "normal",
    "pair_collision": "OC-N",
    "zigzag": "OO-N",
    "sudden_stop": "VO-N",
}
CATEGORY_KIND = {v: k for k, v in KIND_CATEGORY.items()}

# (start range, length range) as fractions of the video, used by generate_dataset
KIND_INTERVALS = {
    "pair_collision": ((0.35, 0.55), (0.30, 0.40)),
    "zigzag": ((0.35, 0.55), (0.30, 0.40)),
    "sudden_stop": ((0.35, 0.55), (0.08, 0.12)),
}


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    num_frames: int = 150
    fps: float = 10.0
    num_objects: int = 3
    anomaly_kind: str = "none"
    anomaly_start_frac: float = 0.4
    anomaly_end_frac: float = 0.7
    noise_std: float = 0.0005
    video_id: str = "video"
    # kinematics, per frame
    max_speed: float = 0.006
    turn_rate: float = 0.01
    growth_rate: float = 0.004
    late_entry_prob: float = 0.3
    # anomaly severity
    zigzag_amplitude: float = 0.05
    zigzag_period: float = 6.0
    collision_frac: float = 0.5
    crash_jitter: float = 0.01
    crash_decay: float = 10.0  # frames
    stop_min_speed: float = 0.6  # fraction of max_speed for the object that stops
    perspective: bool = True
    ref_height: float = 0.1

    def __post_init__(self):
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ValueError(f"unknown anomaly kind {self.anomaly_kind!r}")
        if not 0 <= self.anomaly_start_frac < self.anomaly_end_frac <= 1:
            raise ValueError("need 0 <= anomaly_start_frac < anomaly_end_frac <= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.num_frames < 1 or self.num_objects < 0:
            raise ValueError("num_frames must be >= 1 and num_objects >= 0")
        if not 0 <= self.stop_min_speed <= 1:
            raise ValueError("stop_min_speed must lie in [0, 1]")
        if self.ref_height <= 0:
            raise ValueError("ref_height must be > 0")
        if self.crash_decay <= 0 or self.zigzag_period <= 0:
            raise ValueError("crash_decay and zigzag_period must be > 0")

    def interval(self) -> tuple[int, int]:
        """Inclusive labeled frame interval."""
        n = self.num_frames
        start = min(int(math.floor(self.anomaly_start_frac * n)), n - 1)
        stop = max(start, int(math.ceil(self.anomaly_end_frac * n)) - 1)
        return start, min(stop, n - 1)


def _scale(spec: ScenarioSpec, h) -> float:
    return h / spec.ref_height if spec.perspective else 1.0


def _normal_motion(rng, spec: ScenarioSpec, n: int, min_speed: float = 0.2):
    """Noise-free (n, 4) box sequence plus the per-frame velocity."""
    u = rng.uniform(min_speed, 1.0)
    heading = rng.uniform(-math.pi, math.pi)
    omega = rng.uniform(-spec.turn_rate, spec.turn_rate)
    growth = rng.uniform(-spec.growth_rate, spec.growth_rate)
    c0 = np.array([rng.uniform(0.1, 0.9), rng.uniform(0.35, 0.75)])
    w0 = rng.uniform(0.03, 0.15)
    h0 = w0 * rng.uniform(0.6, 1.1)
    speed = u * spec.max_speed * _scale(spec, h0)
    ang = heading + omega * np.arange(n)
    vel = speed * np.column_stack([np.cos(ang), 0.4 * np.sin(ang)])
    centers = c0 + np.vstack([np.zeros((1, 2)), np.cumsum(vel[:-1], axis=0)])
    scale = np.exp(growth * np.arange(n))
    boxes = np.column_stack([centers, w0 * scale, h0 * scale])
    return boxes, vel


def _inject_collision(rng, spec, boxes, start, stop):
    a, b = boxes[0], boxes[1]
    contact = start + max(1, int(round(spec.collision_frac * (stop - start))))
    contact = min(contact, len(a) - 1)
    side = 1.0 if b[start, 0] >= a[contact, 0] else -1.0
    target = a[contact, :2] + np.array([side * 0.3 * (a[contact, 2] + b[start, 2]) / 2, 0.0])
    origin = b[start, :2].copy()
    span = contact - start
    for t in range(start, contact + 1):
        u = (t - start) / span
        b[t, :2] = origin + (target - origin) * u * u
    rest_a, rest_b = a[contact].copy(), b[contact].copy()
    for t in range(contact + 1, len(a)):
        decay = math.exp(-(t - contact) / spec.crash_decay) if t <= stop else 0.0
        for box, rest in ((a, rest_a), (b, rest_b)):
            jolt = spec.crash_jitter * _scale(spec, rest[3]) * decay * rng.standard_normal(4)
            box[t, :2] = rest[:2] + jolt[:2]
            box[t, 2:] = rest[2:] * np.exp(jolt[2:] * 2)


def _inject_zigzag(spec, boxes, vel, start, stop):
    for t in range(start, stop + 1):
        v = vel[t]
        normal = np.array([-v[1], v[0]]) / max(np.linalg.norm(v), 1e-12)
        amp = spec.zigzag_amplitude * _scale(spec, boxes[t, 3])
        boxes[t, :2] += amp * math.sin(2 * math.pi * (t - start) / spec.zigzag_period) * normal


def generate_video(spec: ScenarioSpec) -> VideoRecord:
    rng = np.random.default_rng(spec.seed)
    n = spec.num_frames
    kind = spec.anomaly_kind
    needed = {"none": 0, "pair_collision": 2, "zigzag": 1, "sudden_stop": 1}[kind]
    if spec.num_objects < needed:
        raise ValueError(f"{kind} needs at least {needed} objects, spec has {spec.num_objects}")

    all_boxes, vels, firsts = [], [], []
    for i in range(spec.num_objects):
        fast = kind == "sudden_stop" and i == 0
        boxes, vel = _normal_motion(rng, spec, n, spec.stop_min_speed if fast else 0.2)
        late = rng.uniform() < spec.late_entry_prob
        first = int(rng.integers(1, max(2, int(0.3 * n)))) if (late and i >= needed and n > 2) else 0
        all_boxes.append(boxes)
        vels.append(vel)
        firsts.append(first)

    labels = np.zeros(n, dtype=np.int8)
    if kind != "none":
        start, stop = spec.interval()
        labels[start : stop + 1] = 1
        if kind == "pair_collision":
            _inject_collision(rng, spec, all_boxes, start, stop)
        elif kind == "zigzag":
            _inject_zigzag(spec, all_boxes[0], vels[0], start, stop)
        elif kind == "sudden_stop":
            all_boxes[0][start:] = all_boxes[0][start]

    tracks = []
    for i, (boxes, first) in enumerate(zip(all_boxes, firsts)):
        sd = spec.noise_std * (boxes[first:, 3:4] / spec.ref_height if spec.perspective else 1.0)
        obs = boxes[first:] + sd * rng.standard_normal((n - first, 4))
        obs[:, 2:] = np.maximum(obs[:, 2:], 1e-4)
        tracks.append(Track(i, first, obs))

    return VideoRecord(
        video_id=spec.video_id,
        fps=spec.fps,
        num_frames=n,
        tracks=tuple(tracks),
        frame_labels=labels,
        category=KIND_CATEGORY[kind],
        involvement="non-ego",
    )


def _allocate(mix: dict, total: int) -> dict:
    """Largest-remainder split of ``total`` videos over the anomaly kinds."""
    bad = set(mix) - set(ANOMALY_KINDS)
    if bad:
        raise ValueError(f"unknown anomaly kinds {sorted(bad)}")
    if any(v < 0 for v in mix.values()) or sum(mix.values()) > 1 + 1e-9:
        raise ValueError("anomaly_mix fractions must be >= 0 and sum to at most 1")
    raw = {k: mix[k] * total for k in mix}
    counts = {k: int(math.floor(v)) for k, v in raw.items()}
    leftover = int(round(sum(raw.values()))) - sum(counts.values())
    for k in sorted(raw, key=lambda k: (-(raw[k] - counts[k]), k))[: max(leftover, 0)]:
        counts[k] += 1
    counts["none"] = counts.get("none", 0) + total - sum(counts.values())
    return counts


def generate_dataset(train_count: int, test_count: int, anomaly_mix: dict, seed: int,
                     out_dir=None, **spec_overrides):
    """Normal-only training videos and a mixed test set.

    ``anomaly_mix`` maps anomaly kinds to fractions of the test set; whatever
    is left over is normal. With ``out_dir`` the videos are written to
    ``out_dir/train`` and ``out_dir/test`` as track files plus sidecars.
    """
    if train_count <= 0 or test_count <= 0:
        raise ValueError("train_count and test_count must be positive")
    counts = _allocate(anomaly_mix, test_count)
    root = np.random.SeedSequence(seed)
    train_ss, test_ss, order_ss = root.spawn(3)

    train = [
        generate_video(replace(ScenarioSpec(**spec_overrides), seed=_seed(ss), video_id=f"train_{i:04d}",
                               anomaly_kind="none"))
        for i, ss in enumerate(train_ss.spawn(train_count))
    ]

    kinds = [k for k in ANOMALY_KINDS for _ in range(counts.get(k, 0))]
    kinds = [kinds[i] for i in np.random.default_rng(order_ss).permutation(len(kinds))]
    test = []
    for i, (kind, ss) in enumerate(zip(kinds, test_ss.spawn(test_count))):
        vseed = _seed(ss)
        fields = dict(spec_overrides, seed=vseed, video_id=f"test_{i:04d}", anomaly_kind=kind)
        if kind != "none" and not {"anomaly_start_frac", "anomaly_end_frac"} & set(spec_overrides):
            (s_lo, s_hi), (l_lo, l_hi) = KIND_INTERVALS[kind]
            r = np.random.default_rng([vseed, 1])
            start = r.uniform(s_lo, s_hi)
            fields.update(anomaly_start_frac=start, anomaly_end_frac=min(1.0, start + r.uniform(l_lo, l_hi)))
        if kind == "pair_collision":
            fields["num_objects"] = max(2, fields.get("num_objects", ScenarioSpec.num_objects))
        test.append(generate_video(ScenarioSpec(**fields)))

    if out_dir is not None:
        out = Path(out_dir)
        for split, videos in (("train", train), ("test", test)):
            for v in videos:
                write_video(v, out / split)
    return train, test


def _seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# -- stand-in scene-expert scores -------------------------------------------

SCENE_DEFAULTS = {"ffp": (-30.0, 1.5), "str": (50.0, 5.0)}
FFP_VALID_FROM = 4  # 1-based T_ffp + 1 with T_ffp = 4
STR_VALID_FROM = 3  # 1-based T_ffp


def synth_scene_scores(video: VideoRecord, seed: int, delta: float = 0.0, ffp=None, str_=None):
    """Gaussian stand-ins for the two scene scores of one video.

    Normal frames draw from ``N(mu0, sigma0)``; labeled frames are shifted by
    ``delta * sigma0``. These are synthetic fixtures, not network outputs.
    """
    rng = np.random.default_rng([seed, 7])
    labels = video.frame_labels.astype(float)
    out = []
    for (mu0, sd0), valid in ((ffp or SCENE_DEFAULTS["ffp"], FFP_VALID_FROM),
                              (str_ or SCENE_DEFAULTS["str"], STR_VALID_FROM)):
        s = mu0 + sd0 * rng.standard_normal(video.num_frames) + delta * sd0 * labels
        s[:valid] = mu0
        out.append(ScoreSeries(video.video_id, s, min(valid, video.num_frames)))
    ffp_s, str_s = out
    # reconstruction losses are never negative
    str_s = ScoreSeries(str_s.video_id, np.maximum(str_s.scores, 1e-6), str_s.valid_from)
    return ffp_s, str_s


def relabel_as_ego(video: VideoRecord, start: int, stop: int, category: str = "ST") -> VideoRecord:
    """Copy of ``video`` labeled as an ego-involved anomaly on ``[start, stop]``.

    Ego anomalies have no trajectory signature here; pair with
    :func:`synth_scene_scores` using ``delta > 0`` to give them one.
    """
    labels = np.zeros(video.num_frames, dtype=np.int8)
    labels[start : stop + 1] = 1
    return VideoRecord(video.video_id, video.fps, video.num_frames, video.tracks, labels, category, "ego")
