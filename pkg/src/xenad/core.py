"""Shared geometry, record types and causal smoothing used by every expert.

Boxes live in normalized image coordinates: centers and sizes are fractions
of the image width/height. Frame indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Box",
    "TransformParams",
    "Track",
    "VideoRecord",
    "ScoreSeries",
    "apply_transform",
    "infer_transform",
    "distance_score",
    "butterworth_sos",
    "lowpass_filter",
    "lowpass_array",
]


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width/height must be positive, got w={self.w}, h={self.h}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Box":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class TransformParams:
    """Anchor-relative box transform: additive center offsets, log-scale size factors."""

    px: float
    py: float
    pw: float
    ph: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.px, self.py, self.pw, self.ph)):
            raise ValueError("non-finite transform parameters")

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.pw, self.ph], dtype=float)


def apply_transform(anchor: Box, p: TransformParams) -> Box:
    """Move ``anchor`` by ``p``: shift the center, scale the size by ``exp``."""
    return Box(
        anchor.cx + p.px,
        anchor.cy + p.py,
        anchor.w * math.exp(p.pw),
        anchor.h * math.exp(p.ph),
    )


def infer_transform(anchor: Box, target: Box) -> TransformParams:
    """Exact inverse of :func:`apply_transform` for a given anchor."""
    if target.w <= 0 or target.h <= 0:
        raise ValueError("target box must have positive width and height")
    return TransformParams(
        target.cx - anchor.cx,
        target.cy - anchor.cy,
        math.log(target.w / anchor.w),
        math.log(target.h / anchor.h),
    )


def distance_score(win_i, win_j) -> float:
    """Size-aware proximity of two box windows, minimized over the window.

    ``win_i`` and ``win_j`` are ``(T, 4)`` arrays (or sequences of :class:`Box`)
    covering the same frames. Lower values mean the boxes come closer; the
    value goes negative once the boxes overlap.
    """
    a = _as_box_array(win_i)
    b = _as_box_array(win_j)
    if a.shape != b.shape:
        raise ValueError(f"window shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < 1:
        raise ValueError("empty window")
    per_frame = (
        np.abs(a[:, 0] - b[:, 0])
        - (a[:, 2] + b[:, 2]) / 2
        + np.abs(a[:, 1] - b[:, 1])
        - (a[:, 3] + b[:, 3]) / 2
    )
    return float(per_frame.min())


def _as_box_array(win) -> np.ndarray:
    if isinstance(win, np.ndarray):
        arr = win.astype(float, copy=False)
    else:
        arr = np.array([b.as_array() if isinstance(b, Box) else b for b in win], dtype=float)
    return arr.reshape(-1, 4)


@dataclass(frozen=True)
class Track:
    """One object's boxes over a contiguous run of frames."""

    object_id: int
    first_frame: int
    boxes: np.ndarray  # (n, 4) rows of cx, cy, w, h

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=float)
        if boxes.ndim != 2 or boxes.shape[1] != 4 or len(boxes) == 0:
            raise ValueError(f"track {self.object_id}: boxes must be a non-empty (n, 4) array")
        if not np.all(np.isfinite(boxes)):
            raise ValueError(f"track {self.object_id}: non-finite box values")
        if np.any(boxes[:, 2:] <= 0):
            raise ValueError(f"track {self.object_id}: non-positive box size")
        if self.first_frame < 0:
            raise ValueError(f"track {self.object_id}: negative first_frame")
        boxes.setflags(write=False)
        object.__setattr__(self, "boxes", boxes)

    @property
    def last_frame(self) -> int:
        return self.first_frame + len(self.boxes) - 1

    def __len__(self):
        return len(self.boxes)

    def covers(self, start: int, stop: int) -> bool:
        """True when the track is present on every frame in ``[start, stop]``."""
        return self.first_frame <= start and stop <= self.last_frame

    def window(self, start: int, stop: int) -> np.ndarray:
        return self.boxes[start - self.first_frame : stop - self.first_frame + 1]

    def box(self, frame: int) -> Box:
        return Box.from_array(self.boxes[frame - self.first_frame])


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    fps: float
    num_frames: int
    tracks: tuple = ()
    frame_labels: np.ndarray = field(default=None)
    category: str = "normal"
    involvement: str = "non-ego"

    def __post_init__(self):
        labels = self.frame_labels
        if labels is None:
            labels = np.zeros(self.num_frames, dtype=np.int8)
        labels = np.asarray(labels, dtype=np.int8)
        if labels.shape != (self.num_frames,):
            raise ValueError(
                f"{self.video_id}: frame_labels length {labels.shape} != num_frames {self.num_frames}"
            )
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError(f"{self.video_id}: frame labels must be 0/1")
        on = np.flatnonzero(labels)
        if len(on) and on[-1] - on[0] + 1 != len(on):
            raise ValueError(f"{self.video_id}: anomalous frames must form one contiguous interval")
        if self.involvement not in ("ego", "non-ego"):
            raise ValueError(f"{self.video_id}: involvement must be 'ego' or 'non-ego'")
        labels.setflags(write=False)
        object.__setattr__(self, "frame_labels", labels)
        tracks = tuple(self.tracks)
        for tr in tracks:
            if tr.last_frame >= self.num_frames:
                raise ValueError(f"{self.video_id}: track {tr.object_id} runs past the last frame")
        object.__setattr__(self, "tracks", tracks)

    def tracks_at(self, frame: int):
        return [tr for tr in self.tracks if tr.first_frame <= frame <= tr.last_frame]

    @property
    def is_anomalous(self) -> bool:
        return bool(self.frame_labels.any())


@dataclass(frozen=True)
class ScoreSeries:
    """Per-frame anomaly scores. Frames before ``valid_from`` carry an assigned value."""

    video_id: str
    scores: np.ndarray
    valid_from: int = 0

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).copy()
        if s.ndim != 1:
            raise ValueError("scores must be one-dimensional")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"{self.video_id}: non-finite scores")
        if self.valid_from < 0:
            raise ValueError("valid_from must be >= 0")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.scores)

    def with_assigned_prefix(self, value: float) -> "ScoreSeries":
        """Replace every frame before ``valid_from`` by ``value``."""
        s = self.scores.copy()
        s[: self.valid_from] = value
        return ScoreSeries(self.video_id, s, self.valid_from)


# -- causal smoothing ---------------------------------------------------------


def butterworth_sos(order: int, cutoff: float, fs: float) -> np.ndarray:
    """Digital Butterworth low-pass as second-order sections (bilinear transform).

    Rows are ``[b0, b1, b2, 1, a1, a2]``; a first-order section is appended for
    odd orders with ``b2 = a2 = 0``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if not 0 < cutoff < fs / 2:
        raise ValueError(f"cutoff {cutoff} Hz must lie in (0, Nyquist={fs / 2} Hz)")
    k = math.tan(math.pi * cutoff / fs)  # prewarped analog cutoff
    sections = []
    for i in range(1, order // 2 + 1):
        q = 1.0 / (2.0 * math.sin(math.pi * (2 * i - 1) / (2 * order)))
        norm = 1.0 / (1.0 + k / q + k * k)
        b0 = k * k * norm
        sections.append([b0, 2 * b0, b0, 1.0, 2 * (k * k - 1) * norm, (1 - k / q + k * k) * norm])
    if order % 2:
        b0 = k / (1 + k)
        sections.append([b0, b0, 0.0, 1.0, (k - 1) / (k + 1), 0.0])
    return np.array(sections, dtype=float)


def lowpass_array(x, fps: float, cutoff: float = 0.2, order: int = 2) -> np.ndarray:
    """Causal Butterworth filtering of a 1-D array.

    Delay states start at the steady state of the first sample, so a constant
    input passes through unchanged from the very first frame.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a 1-D series")
    sos = butterworth_sos(order, cutoff, fps)
    y = x.copy()
    if len(y) == 0:
        return y
    for b0, b1, b2, _, a1, a2 in sos:
        x0 = y[0]
        z2 = (b2 - a2) * x0
        z1 = (b1 - a1) * x0 + z2
        out = np.empty_like(y)
        for t, v in enumerate(y):
            o = b0 * v + z1
            z1 = b1 * v - a1 * o + z2
            z2 = b2 * v - a2 * o
            out[t] = o
        y = out
    return y


def lowpass_filter(series: ScoreSeries, fps: float, cutoff: float = 0.2, order: int = 2) -> ScoreSeries:
    """Smooth the valid part of ``series``; the assigned prefix is left as is.

    Filtering restarts for every series, i.e. every video.
    """
    butterworth_sos(order, cutoff, fps)  # validates the band edge even for empty series
    s = series.scores.copy()
    v = series.valid_from
    if v < len(s):
        s[v:] = lowpass_array(s[v:], fps, cutoff, order)
    return ScoreSeries(series.video_id, s, v)
