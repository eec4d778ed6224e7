"""Frame-level AUC and F1 over concatenated videos.

The default ``raw`` protocol concatenates every video's scores as they are.
``legacy_minmax`` first rescales each video to [0, 1] on its own, which hides
score offsets between videos and can make a mediocre detector look perfect;
it is kept only for contrast. A video with constant scores maps to all zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

PROTOCOLS = ("raw", "legacy_minmax")


def _num(x) -> str:
    return repr(float(x))


def _check(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return s, y.astype(bool)


def roc_curve(scores, labels):
    """``(fpr, tpr, thresholds)`` with one point per distinct score, from (0, 0) to (1, 1)."""
    s, y = _check(scores, labels)
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise ValueError("ROC needs both positive and negative frames")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # end of each tie group
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    fpr = np.r_[0.0, fp / neg]
    tpr = np.r_[0.0, tp / pos]
    return fpr, tpr, np.r_[np.inf, s[last]]


def auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve (ties count one half)."""
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def auc_rank(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg) via midranks; an independent route to :func:`auc`."""
    s, y = _check(scores, labels)
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs both positive and negative frames")
    r = rankdata(s)
    return float((r[y].sum() - pos * (pos + 1) / 2) / (pos * neg))


def f1_at(scores, labels, tau: float):
    """``(precision, recall, f1)`` for the decision ``score > tau``."""
    s, y = _check(scores, labels)
    pred = s > tau
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def minmax(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    lo, hi = s.min(), s.max()
    return np.zeros_like(s) if hi == lo else (s - lo) / (hi - lo)


@dataclass
class EvalResult:
    auc: float
    precision: float
    recall: float
    f1: float
    threshold: float
    protocol: str
    num_frames: int
    num_positive: int
    per_class: dict = field(default_factory=dict)  # tag -> (auc, f1); auc is nan for one-class subsets

    def as_dict(self) -> dict:
        d = {
            "protocol": self.protocol,
            "auc": self.auc,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "threshold": self.threshold,
            "num_frames": self.num_frames,
            "num_positive": self.num_positive,
        }
        for tag, (a, f) in sorted(self.per_class.items()):
            d[f"class.{tag}.auc"] = a
            d[f"class.{tag}.f1"] = f
        return d


def _concat(items, protocol):
    s = [minmax(sc) if protocol == "legacy_minmax" else np.asarray(sc, dtype=float) for _, sc, _ in items]
    return np.concatenate(s), np.concatenate([np.asarray(lb) for _, _, lb in items])


def evaluate(videos, protocol: str = "raw", tau: float = 0.5) -> EvalResult:
    """Metrics over a list of videos.

    Each item is ``(video_id, scores, labels)`` or ``(video_id, scores,
    labels, tags)`` where ``tags`` is an iterable of class tags (category,
    involvement) the video belongs to. ``per_class`` restricts the
    concatenation to the videos carrying each tag; subsets without both
    classes get ``nan`` AUC.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    items, tags = [], []
    for item in videos:
        vid, scores, labels = item[0], item[1], item[2]
        if labels is None:
            raise ValueError(f"video {vid}: no frame labels")
        if len(scores) != len(labels):
            raise ValueError(f"video {vid}: {len(scores)} scores vs {len(labels)} labels")
        items.append((vid, scores, labels))
        tags.append(tuple(item[3]) if len(item) > 3 else ())
    if not items:
        raise ValueError("no videos to evaluate")
    s, y = _concat(items, protocol)
    p, r, f = f1_at(s, y, tau)
    per_class = {}
    for tag in sorted({t for ts in tags for t in ts}):
        sub = [it for it, ts in zip(items, tags) if tag in ts]
        ss, yy = _concat(sub, protocol)
        a = auc(ss, yy) if 0 < yy.sum() < len(yy) else math.nan
        per_class[tag] = (a, f1_at(ss, yy, tau)[2])
    return EvalResult(auc(s, y), p, r, f, float(tau), protocol, len(y), int(y.sum()), per_class)


def format_report(result: EvalResult) -> str:
    lines = [
        f"protocol   {result.protocol}",
        f"frames     {result.num_frames} ({result.num_positive} anomalous)",
        f"AUC        {_num(result.auc)}",
        f"threshold  {_num(result.threshold)}",
        f"precision  {_num(result.precision)}",
        f"recall     {_num(result.recall)}",
        f"F1         {_num(result.f1)}",
    ]
    if result.per_class:
        lines.append("per class (AUC, F1):")
        for tag, (a, f) in sorted(result.per_class.items()):
            lines.append(f"  {tag:<10} {_num(a)} {_num(f)}")
    return "\n".join(lines) + "\n"


def write_report(result: EvalResult, text_path, kv_path=None) -> None:
    text_path = Path(text_path)
    text_path.parent.mkdir(parents=True, exist_ok=True)
    text_path.write_text(format_report(result))
    if kv_path is not None:
        Path(kv_path).write_text("".join(f"{k}={_num(v)}\n" if isinstance(v, float) else f"{k}={v}\n"
                                         for k, v in result.as_dict().items()))


def read_kv_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            try:
                out[k] = float(v) if k not in ("protocol",) else v
            except ValueError:
                out[k] = v
    return out


def write_roc(scores, labels, path) -> None:
    fpr, tpr, thr = roc_curve(scores, labels)
    rows = ["threshold,fpr,tpr"] + [f"{_num(t)},{_num(a)},{_num(b)}" for t, a, b in zip(thr, fpr, tpr)]
    Path(path).write_text("\n".join(rows) + "\n")
