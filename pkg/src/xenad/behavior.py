"""Behavior expert: per-object future box prediction and prediction consistency.

Each object's boxes are embedded and run through an encoder GRU from the
object's first frame (zero initial state). At every frame ``t`` the decoder
starts from an affine map of the encoder state, with the last observed box
``X_t`` as anchor and a zero transform as its first input, and rolls out
``delta`` anchor-relative transforms autoregressively.

Predictions of the same future frame made at different origins should agree
for normal motion. Their spread, scaled by the predicted box height, is the
per-object anomaly score.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .core import Box, ScoreSeries, VideoRecord, lowpass_filter

log = logging.getLogger(__name__)

HEIGHT_SCALING = ("divide", "multiply", "none")


@dataclass(frozen=True)
class BehaviorConfig:
    delta: int = 10
    box_encoder_mlp: tuple = (512, 64)
    hidden: int = 512
    decoder_out_mlp: tuple = (32, 4)
    fps: float | None = None  # None: use the video's frame rate
    cutoff: float = 0.2
    order: int = 2
    batch: int = 16
    lr: float = 5e-4
    epochs: int = 10
    origins_per_track: int = 16
    height_scaling: str = "divide"
    val_fraction: float = 0.1
    motion_input: bool = True
    motion_scale: float = 100.0

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.decoder_out_mlp[-1] != 4:
            raise ValueError("the decoder must end in 4 outputs (one box transform)")
        if self.height_scaling not in HEIGHT_SCALING:
            raise ValueError(f"height_scaling must be one of {HEIGHT_SCALING}")
        if self.origins_per_track < 1:
            raise ValueError("origins_per_track must be >= 1")
        if not self.motion_scale > 0:
            raise ValueError("motion_scale must be > 0")

    @property
    def input_dim(self) -> int:
        return 8 if self.motion_input else 4

    def as_dict(self):
        return asdict(self)


def init_params(config: BehaviorConfig, seed: int) -> nn.ParamStore:
    rng = np.random.default_rng(seed)
    store = nn.ParamStore()
    e = config.box_encoder_mlp[-1]
    nn.init_mlp(store, "box_embed", config.input_dim, config.box_encoder_mlp, rng)
    nn.init_gru(store, "enc_gru", e, config.hidden, rng)
    nn.init_dense(store, "bridge", config.hidden, config.hidden, rng)
    nn.init_mlp(store, "dec_embed", 4, config.box_encoder_mlp, rng)
    nn.init_gru(store, "dec_gru", e, config.hidden, rng)
    nn.init_mlp(store, "dec_out", config.hidden, config.decoder_out_mlp, rng)
    return store


def _leaves(params):
    return params.leaves(requires_grad=False) if isinstance(params, nn.ParamStore) else params


def _embed_acts(config):
    return ("relu",) * len(config.box_encoder_mlp)


def track_features(boxes, config: BehaviorConfig) -> np.ndarray:
    """Encoder inputs for ``(..., L, 4)`` boxes.

    With ``motion_input`` each box is followed by ``motion_scale`` times its
    transform from the previous box (zero on the first frame).
    """
    boxes = np.asarray(boxes, dtype=float)
    if not config.motion_input:
        return boxes
    d = np.zeros_like(boxes)
    d[..., 1:, :2] = boxes[..., 1:, :2] - boxes[..., :-1, :2]
    d[..., 1:, 2:] = np.log(boxes[..., 1:, 2:] / boxes[..., :-1, 2:])
    return np.concatenate([boxes, config.motion_scale * d], axis=-1)


def _as_box(b):
    return b.as_array() if isinstance(b, Box) else np.asarray(b, dtype=float)


def encode_step(box, state, params, config: BehaviorConfig, prev_box=None) -> np.ndarray:
    """One encoder update for a single object; ``state`` is a hidden vector.

    ``prev_box`` is the object's box on the previous frame (``None`` on its
    first frame); it only matters with ``motion_input``.
    """
    x = _as_box(box)
    pair = np.stack([_as_box(prev_box) if prev_box is not None else x, x])
    feat = track_features(pair, config)[1]
    p = _leaves(params)
    e = nn.mlp_apply(feat[None], p, "box_embed", _embed_acts(config))
    return nn.gru_step(e, np.asarray(state, dtype=float)[None], p, "enc_gru").value[0]


def _encode(p, boxes: np.ndarray, config, steps: int):
    """Encoder states after each of the first ``steps`` frames of ``(B, L, 4)`` tracks."""
    B = boxes.shape[0]
    feats = track_features(boxes[:, :steps], config)
    h = nn.Tensor(np.zeros((B, config.hidden)))
    states = []
    for k in range(steps):
        e = nn.mlp_apply(feats[:, k], p, "box_embed", _embed_acts(config))
        h = nn.gru_step(e, h, p, "enc_gru")
        states.append(h)
    return states


def _decode(p, h_enc, anchors: np.ndarray, config):
    """Roll out ``delta`` predicted boxes from encoder states ``(N, H)``.

    The output layer emits transforms in units of ``1 / motion_scale``; the
    decoder is fed its own raw outputs, starting from zero.
    """
    N = anchors.shape[0]
    inv = 1.0 / config.motion_scale
    hd = nn.dense(h_enc, p, "bridge")
    prev = nn.Tensor(np.zeros((N, 4)))
    out_acts = ("relu",) * (len(config.decoder_out_mlp) - 1) + (None,)
    boxes = []
    for _ in range(config.delta):
        e = nn.mlp_apply(prev, p, "dec_embed", _embed_acts(config))
        hd = nn.gru_step(e, hd, p, "dec_gru")
        q = nn.mlp_apply(hd, p, "dec_out", out_acts)
        xy = nn.add(anchors[:, :2], nn.mul(q[:, 0:2], inv))
        wh = nn.mul(anchors[:, 2:], nn.exp(nn.mul(q[:, 2:4], inv)))
        boxes.append(nn.concat([xy, wh], axis=1))
        prev = q
    return boxes


def predict_future(state, anchor, params, config: BehaviorConfig) -> np.ndarray:
    """``(delta, 4)`` boxes predicted for frames ``t+1 .. t+delta`` from the state at ``t``."""
    a = anchor.as_array() if isinstance(anchor, Box) else np.asarray(anchor, dtype=float)
    boxes = _decode(_leaves(params), np.asarray(state, dtype=float)[None], a[None], config)
    return np.stack([b.value[0] for b in boxes])


def predict_track(boxes: np.ndarray, params, config: BehaviorConfig) -> np.ndarray:
    """Predictions from every origin of one track: ``(n, delta, 4)``."""
    return predict_tracks([np.asarray(boxes, dtype=float)], params, config)[0]


def predict_tracks(tracks, params, config: BehaviorConfig):
    """Vectorized :func:`predict_track` over a list of ``(n_i, 4)`` box arrays."""
    if not tracks:
        return []
    p = _leaves(params)
    padded, lens = _pad([np.asarray(b, dtype=float) for b in tracks])
    L = padded.shape[1]
    states = np.stack([s.value for s in _encode(p, padded, config, L)], axis=1)  # (B, L, H)
    rows = [(i, k) for i, n in enumerate(lens) for k in range(n)]
    bi, ki = np.array(rows).T
    preds = _decode(p, states[bi, ki], padded[bi, ki], config)
    flat = np.stack([b.value for b in preds], axis=1)  # (rows, delta, 4)
    out, pos = [], 0
    for n in lens:
        out.append(flat[pos : pos + n])
        pos += n
    return out


# -- training -----------------------------------------------------------------


def batch_loss(params, boxes: np.ndarray, lengths: np.ndarray, origins: np.ndarray,
               config: BehaviorConfig) -> nn.Tensor:
    """Masked MSE of the ``delta``-step rollouts.

    ``boxes`` holds ``(B, L, 4)`` padded tracks, ``origins`` is ``(B, K)``
    frame indices inside each track. Targets past a track's end are masked.
    """
    B, K = origins.shape
    steps = int(origins.max()) + 1
    states = nn.stack(_encode(params, boxes, config, steps), axis=1)  # (B, steps, H)
    bi = np.repeat(np.arange(B), K)
    ki = origins.reshape(-1)
    h = states[bi, ki]
    preds = _decode(params, h, boxes[bi, ki], config)
    total, count = None, 0.0
    for k, pred in enumerate(preds, start=1):
        tgt_idx = np.minimum(ki + k, boxes.shape[1] - 1)
        mask = ((ki + k) < lengths[bi]).astype(float)[:, None]
        if not mask.any():
            continue
        err = nn.mul(nn.square(nn.sub(pred, boxes[bi, tgt_idx])), mask)
        term = nn.sum_(err)
        total = term if total is None else nn.add(total, term)
        count += 4.0 * mask.sum()
    if total is None:
        raise ValueError("batch has no prediction targets")
    return nn.mul(total, 1.0 / count)


def _training_tracks(videos):
    return [tr.boxes for v in videos for tr in v.tracks if len(tr) >= 2]


def _pad(tracks):
    L = max(len(b) for b in tracks)
    out = np.zeros((len(tracks), L, 4))
    for i, b in enumerate(tracks):
        out[i, : len(b)] = b
        out[i, len(b) :] = b[-1]
    return out, np.array([len(b) for b in tracks])


def _sample_origins(rng, lengths, k):
    # origins with at least one future target
    return np.stack([rng.integers(0, n - 1, size=k) for n in lengths])


def train_behavior(videos, config: BehaviorConfig, seed: int, params=None):
    """Fit the predictor on normal videos with Adam; returns ``(params, history)``.

    A batch holds ``config.batch`` tracks with ``origins_per_track`` random
    prediction origins each; the encoder pass is shared by all origins of a
    track.
    """
    tracks = _training_tracks(videos)
    if not tracks:
        raise ValueError("no trainable tracks in the training videos (need tracks of >= 2 frames)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(tracks))
    n_val = int(round(config.val_fraction * len(tracks))) if len(tracks) > 10 else 0
    val = [tracks[i] for i in perm[:n_val]]
    train = [tracks[i] for i in perm[n_val:]]
    params = params or init_params(config, seed)
    state = nn.AdamState()
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        total, n = 0.0, 0
        for i in range(0, len(train), config.batch):
            boxes, lengths = _pad([train[j] for j in order[i : i + config.batch]])
            origins = _sample_origins(rng, lengths, config.origins_per_track)
            loss, grads = nn.grad(lambda p: batch_loss(p, boxes, lengths, origins, config), params)
            nn.adam_step(params, grads, state, config.lr)
            total += loss * len(lengths)
            n += len(lengths)
        rec = {"epoch": epoch + 1, "train_loss": total / n}
        if val:
            rec["val_loss"] = validation_loss(params, val, config)
        history.append(rec)
        log.info("stage=train expert=behavior epoch=%d train_loss=%.6g val_loss=%s wall=%.2fs",
                 epoch + 1, rec["train_loss"], rec.get("val_loss", "nan"), time.perf_counter() - t0)
    return params, history


def validation_loss(params, tracks, config: BehaviorConfig) -> float:
    """Masked MSE over every origin of every track."""
    se, count = 0.0, 0
    for b, pred in zip(tracks, predict_tracks(list(tracks), params, config)):
        for k in range(1, config.delta + 1):
            m = len(b) - k
            if m <= 0:
                break
            se += float(((pred[:m, k - 1] - b[k:]) ** 2).sum())
            count += 4 * m
    return se / max(count, 1)


# -- scoring ------------------------------------------------------------------


class PredictionBuffer:
    """Rolling store of each object's recent rollouts.

    ``add(obj, origin, preds)`` records the ``delta`` boxes predicted at
    ``origin`` for frames ``origin+1 .. origin+delta``. ``at(frame)`` returns,
    per object, the stacked predictions for ``frame`` from origins
    ``frame-delta .. frame-1``; older rollouts are dropped as frames advance.
    """

    def __init__(self, delta: int):
        if delta < 1:
            raise ValueError("delta must be >= 1")
        self.delta = delta
        self._entries: dict[int, deque] = {}

    def add(self, obj: int, origin: int, preds) -> None:
        preds = np.asarray(preds, dtype=float)
        if preds.shape != (self.delta, 4):
            raise ValueError(f"expected ({self.delta}, 4) predictions, got {preds.shape}")
        q = self._entries.setdefault(obj, deque())
        if q and origin <= q[-1][0]:
            raise ValueError(f"object {obj}: origin {origin} not after {q[-1][0]}")
        q.append((origin, preds))

    def expire(self, frame: int) -> None:
        """Drop rollouts that cannot reach ``frame`` or later."""
        for obj in list(self._entries):
            q = self._entries[obj]
            while q and q[0][0] < frame - self.delta:
                q.popleft()
            if not q:
                del self._entries[obj]

    def at(self, frame: int) -> dict:
        self.expire(frame)
        out = {}
        for obj, q in self._entries.items():
            rows = [p[frame - o - 1] for o, p in q if o < frame]
            if rows:
                out[obj] = np.array(rows)
        return out

    def count(self, obj: int, frame: int) -> int:
        return sum(1 for o, _ in self._entries.get(obj, ()) if frame - self.delta <= o < frame)


def consistency_score(predictions, height_scaling: str = "divide") -> float:
    """Height-scaled spread of the ``(n, 4)`` predictions made for one frame.

    Mean over the four coordinates of the population STD, divided (or
    multiplied, or left alone) by the mean predicted height. Fewer than two
    predictions give 0.
    """
    p = np.asarray(predictions, dtype=float).reshape(-1, 4)
    if len(p) < 2:
        return 0.0
    spread = float(p.std(axis=0).mean())
    lam = float(p[:, 3].mean())
    if height_scaling == "divide":
        return spread / lam
    if height_scaling == "multiply":
        return spread * lam
    if height_scaling == "none":
        return spread
    raise ValueError(f"height_scaling must be one of {HEIGHT_SCALING}")


def raw_behavior_scores(video: VideoRecord, params, config: BehaviorConfig):
    """Unfiltered per-frame scores and ``valid_from`` for one video.

    The frame score averages over objects that are observed at the frame or
    still have buffered predictions for it; objects with fewer than two
    predictions contribute 0. Frames without such objects score 0.
    """
    T = video.num_frames
    tracks = list(video.tracks)
    preds = predict_tracks([tr.boxes for tr in tracks], params, config)
    by_origin: dict[int, list] = {}
    for tr, pr in zip(tracks, preds):
        for k in range(len(tr)):
            by_origin.setdefault(tr.first_frame + k, []).append((tr.object_id, pr[k]))
    observed = {t: [tr.object_id for tr in video.tracks_at(t)] for t in range(T)}
    buf = PredictionBuffer(config.delta)
    raw = np.zeros(T)
    valid_from = None
    for t in range(T):
        current = buf.at(t)
        objs = sorted(set(current) | set(observed[t]))
        if objs:
            vals = [consistency_score(current.get(o, ()), config.height_scaling) for o in objs]
            raw[t] = float(np.mean(vals))
        if valid_from is None and any(len(v) >= 2 for v in current.values()):
            valid_from = t
        for obj, pr in by_origin.get(t, ()):
            buf.add(obj, t, pr)
    return raw, (T if valid_from is None else valid_from)


def score_behavior(video: VideoRecord, params, config: BehaviorConfig) -> ScoreSeries:
    raw, valid_from = raw_behavior_scores(video, params, config)
    series = ScoreSeries(video.video_id, raw, valid_from)
    return lowpass_filter(series, config.fps or video.fps, config.cutoff, config.order)
