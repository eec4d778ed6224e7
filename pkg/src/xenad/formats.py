"""Text file formats shared by the pipeline stages.

Track file (``<video_id>.tracks.csv``)::

    video_id,frame,object_id,cx,cy,w,h
    train_0000,0,0,0.4123,...

one row per object per frame, frames 0-based, sorted by frame then object.
Every video has a JSON sidecar (``<video_id>.meta.json``) with the keys
``fps, num_frames, frame_labels, category, involvement`` in that order.

Score file (``<video_id>.csv``)::

    # valid_from=2
    video_id,frame,score

Fused file: ``video_id,frame,s,x_ffp,x_str,x_int,x_beh`` with the same
``valid_from`` comment. Floats are written with ``repr`` so a read gives back
the identical double.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import ScoreSeries, Track, VideoRecord

TRACK_FIELDS = ("video_id", "frame", "object_id", "cx", "cy", "w", "h")
META_FIELDS = ("fps", "num_frames", "frame_labels", "category", "involvement")
SCORE_FIELDS = ("video_id", "frame", "score")
FUSED_FIELDS = ("video_id", "frame", "s", "x_ffp", "x_str", "x_int", "x_beh")


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def _num(x: float) -> str:
    return repr(float(x))


def track_path(directory, video_id) -> Path:
    return Path(directory) / f"{video_id}.tracks.csv"


def meta_path(directory, video_id) -> Path:
    return Path(directory) / f"{video_id}.meta.json"


def write_video(video: VideoRecord, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for tr in video.tracks:
        for k, b in enumerate(tr.boxes):
            rows.append((tr.first_frame + k, tr.object_id, b))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = [",".join(TRACK_FIELDS)]
    for frame, oid, b in rows:
        lines.append(f"{video.video_id},{frame},{oid},{_num(b[0])},{_num(b[1])},{_num(b[2])},{_num(b[3])}")
    try:
        track_path(directory, video.video_id).write_text("\n".join(lines) + "\n")
        meta = {
            "fps": float(video.fps),
            "num_frames": int(video.num_frames),
            "frame_labels": [int(v) for v in video.frame_labels],
            "category": video.category,
            "involvement": video.involvement,
        }
        meta_path(directory, video.video_id).write_text(json.dumps(meta) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing video {video.video_id} to {directory}: {exc}") from exc


def read_video(directory, video_id) -> VideoRecord:
    tpath, mpath = track_path(directory, video_id), meta_path(directory, video_id)
    try:
        meta = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: invalid JSON ({exc})") from exc
    missing = [k for k in META_FIELDS if k not in meta]
    if missing:
        raise FormatError(f"{mpath}: missing keys {missing}")
    per_obj: dict[int, list] = {}
    with open(tpath, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TRACK_FIELDS:
            raise FormatError(f"{tpath}:1: expected header {','.join(TRACK_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACK_FIELDS):
                raise FormatError(f"{tpath}:{lineno}: expected {len(TRACK_FIELDS)} fields, got {len(row)}")
            if row[0] != video_id:
                raise FormatError(f"{tpath}:{lineno}: video_id {row[0]!r} != {video_id!r}")
            try:
                frame, oid = int(row[1]), int(row[2])
                box = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise FormatError(f"{tpath}:{lineno}: {exc}") from exc
            per_obj.setdefault(oid, []).append((frame, box))
    tracks = []
    for oid in sorted(per_obj):
        entries = sorted(per_obj[oid])
        frames = [f for f, _ in entries]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise FormatError(f"{tpath}: object {oid} has non-contiguous frames")
        tracks.append(Track(oid, frames[0], np.array([b for _, b in entries])))
    return VideoRecord(
        video_id=video_id,
        fps=float(meta["fps"]),
        num_frames=int(meta["num_frames"]),
        tracks=tuple(tracks),
        frame_labels=np.array(meta["frame_labels"], dtype=np.int8),
        category=meta["category"],
        involvement=meta["involvement"],
    )


def list_videos(directory) -> list[str]:
    return sorted(p.name[: -len(".meta.json")] for p in Path(directory).glob("*.meta.json"))


def read_videos(directory) -> list[VideoRecord]:
    return [read_video(directory, vid) for vid in list_videos(directory)]


def _read_comment_header(lines, path):
    meta, body = {}, []
    for i, line in enumerate(lines):
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        else:
            body = lines[i:]
            return meta, body, i
    return meta, body, len(lines)


def _parse_frames(path, lines, offset, fields, video_id=None):
    if not lines or tuple(lines[0].strip().split(",")) != fields:
        raise FormatError(f"{path}:{offset + 1}: expected header {','.join(fields)}")
    vid, frames, values = video_id, [], []
    for lineno, line in enumerate(lines[1:], start=offset + 2):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != len(fields):
            raise FormatError(f"{path}:{lineno}: expected {len(fields)} fields, got {len(parts)}")
        if vid is None:
            vid = parts[0]
        elif parts[0] != vid:
            raise FormatError(f"{path}:{lineno}: mixed video ids {vid!r} and {parts[0]!r}")
        try:
            frame = int(parts[1])
            vals = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
        expected = frames[-1] + 1 if frames else 0
        if frame != expected:
            raise FormatError(f"{path}:{lineno}: missing frame {expected} (found frame {frame})")
        frames.append(frame)
        values.append(vals)
    return vid, np.array(values, dtype=float).reshape(len(values), len(fields) - 2)


def write_scores(series: ScoreSeries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# valid_from={series.valid_from}", ",".join(SCORE_FIELDS)]
    lines += [f"{series.video_id},{t},{_num(v)}" for t, v in enumerate(series.scores)]
    path.write_text("\n".join(lines) + "\n")


def read_scores(path) -> ScoreSeries:
    path = Path(path)
    meta, body, off = _read_comment_header(path.read_text().splitlines(), path)
    vid, vals = _parse_frames(path, body, off, SCORE_FIELDS)
    try:
        valid_from = int(meta.get("valid_from", 0))
    except ValueError as exc:
        raise FormatError(f"{path}: bad valid_from ({exc})") from exc
    return ScoreSeries(vid or path.stem, vals[:, 0], valid_from)


def write_fused(video_id, scores, states, valid_from, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# valid_from={valid_from}", ",".join(FUSED_FIELDS)]
    for t, (s, x) in enumerate(zip(scores, states)):
        lines.append(",".join([video_id, str(t), _num(s)] + [_num(v) for v in x[:4]]))
    path.write_text("\n".join(lines) + "\n")


def read_fused(path):
    """Return ``(ScoreSeries, states)`` where ``states`` is ``(T, 5)``."""
    path = Path(path)
    meta, body, off = _read_comment_header(path.read_text().splitlines(), path)
    vid, vals = _parse_frames(path, body, off, FUSED_FIELDS)
    states = np.column_stack([vals[:, 1:5], vals[:, 0]]) if len(vals) else np.zeros((0, 5))
    return ScoreSeries(vid or path.stem, vals[:, 0], int(meta.get("valid_from", 0))), states
