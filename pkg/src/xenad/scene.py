"""Scene-level score and loss formulas plus scene-score ingestion.

The frame-prediction and reconstruction networks themselves are not part of
this package. What lives here is the arithmetic applied to their outputs:
negative PSNR of a predicted frame, the frame-prediction training losses,
and the depth/motion reconstruction loss that doubles as a frame score.

Planes are ``(H, W, C)`` float arrays. Differences along the two spatial
axes are taken between neighbours inside the plane (no padding).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ScoreSeries
from .formats import FormatError, _num, _parse_frames, _read_comment_header

MSE_FLOOR = 1e-10
SCENE_FIELDS = ("video_id", "frame", "s_ffp", "s_str")
PLANE_MAGIC = b"XPLN"
PLANE_VERSION = 1


@dataclass(frozen=True)
class ImagePlane:
    values: np.ndarray  # (H, W, C)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"plane must be (H, W, C) with positive sizes, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("plane has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def _arr(x) -> np.ndarray:
    return x.values if isinstance(x, ImagePlane) else np.asarray(x, dtype=float)


def _pair(a, b, what="inputs"):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr_score(predicted, actual) -> float:
    """Negative PSNR for images in [0, 1]: ``10 log10(MSE)``, MSE floored at 1e-10."""
    p, a = _pair(predicted, actual)
    mse = float(np.mean((p - a) ** 2))
    return 10.0 * np.log10(max(mse, MSE_FLOOR))


def l2_loss(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.sum((p - t) ** 2))


def gradient_loss(pred, target) -> float:
    """Mismatch of absolute neighbour differences along both spatial axes."""
    p, t = _pair(pred, target)
    rows = np.abs(np.abs(np.diff(p, axis=0)) - np.abs(np.diff(t, axis=0))).sum()
    cols = np.abs(np.abs(np.diff(p, axis=1)) - np.abs(np.diff(t, axis=1))).sum()
    return float(rows + cols)


def smooth_l1(residual, beta: float = 1.0) -> float:
    r = np.abs(_arr(residual))
    return float(np.where(r < beta, 0.5 * r * r / beta, r - 0.5 * beta).sum())


def ffp_losses(pred_img, target_img, pred_flow, target_flow):
    """``(L2, L_grad, L_of, L_ffp)`` for one predicted frame and flow field."""
    pf, tf = _pair(pred_flow, target_flow, "flow")
    l2 = l2_loss(pred_img, target_img)
    lg = gradient_loss(pred_img, target_img)
    lof = smooth_l1(pf - tf)
    return l2, lg, lof, l2 + lg + lof


def l1_loss(recon, original) -> float:
    r, o = _pair(recon, original)
    return float(np.abs(r - o).sum())


def tv_loss(signal) -> float:
    """Sum of squared neighbour differences along both spatial axes."""
    s = _arr(signal)
    return float((np.diff(s, axis=0) ** 2).sum() + (np.diff(s, axis=1) ** 2).sum())


def str_score(recon_disp, disp, recon_flow, flow, lambda_d: float = 100.0, lambda_tv: float = 0.1) -> float:
    """Depth/motion reconstruction loss, used directly as the frame score."""
    l1_d = l1_loss(recon_disp, disp)
    l1_f = l1_loss(recon_flow, flow)
    return (lambda_d * l1_d + l1_f) + lambda_tv * (lambda_d * tv_loss(recon_disp) + tv_loss(recon_flow))


# -- files --------------------------------------------------------------------


def write_scene_scores(ffp: ScoreSeries, str_: ScoreSeries, path) -> None:
    """Both scene streams of one video in a single CSV."""
    if len(ffp) != len(str_) or ffp.video_id != str_.video_id:
        raise ValueError("scene series must belong to the same video and have equal length")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# ffp_valid_from={ffp.valid_from}", f"# str_valid_from={str_.valid_from}", ",".join(SCENE_FIELDS)]
    lines += [f"{ffp.video_id},{t},{_num(a)},{_num(b)}" for t, (a, b) in enumerate(zip(ffp.scores, str_.scores))]
    path.write_text("\n".join(lines) + "\n")


def load_scene_scores(path):
    """Read ``(ffp, str)`` ScoreSeries from a scene-score CSV.

    Frames must be contiguous from 0; a gap raises :class:`FormatError`
    naming the missing frame. Without ``valid_from`` comments the scene
    experts' defaults (4 and 3) apply.
    """
    path = Path(path)
    meta, body, off = _read_comment_header(path.read_text().splitlines(), path)
    vid, vals = _parse_frames(path, body, off, SCENE_FIELDS)
    vid = vid or path.stem
    try:
        fv = int(meta.get("ffp_valid_from", 4))
        sv = int(meta.get("str_valid_from", 3))
    except ValueError as exc:
        raise FormatError(f"{path}: bad valid_from ({exc})") from exc
    if not np.all(np.isfinite(vals)):
        raise FormatError(f"{path}: non-finite scene score")
    return ScoreSeries(vid, vals[:, 0], fv), ScoreSeries(vid, vals[:, 1], sv)


def write_plane(plane, path) -> None:
    """Binary plane file: magic, version, H, W, C (uint32 LE), then float64 LE values."""
    v = _arr(plane)
    if v.ndim == 2:
        v = v[:, :, None]
    header = PLANE_MAGIC + struct.pack("<4I", PLANE_VERSION, *v.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_plane(path) -> ImagePlane:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != PLANE_MAGIC:
        raise FormatError(f"{path}: not a plane file")
    version, h, w, c = struct.unpack("<4I", data[4:20])
    if version != PLANE_VERSION:
        raise FormatError(f"{path}: plane format version {version}, expected {PLANE_VERSION}")
    n = h * w * c
    if len(data) != 20 + 8 * n:
        raise FormatError(f"{path}: expected {n} values for {h}x{w}x{c}, file size disagrees")
    return ImagePlane(np.frombuffer(data, dtype="<f8", offset=20).reshape(h, w, c).copy())
