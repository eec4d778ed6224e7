"""Interaction expert: GRU autoencoder over pairs of box trajectories.

A pair window holds the boxes of two objects over ``t_int`` frames. The
encoder embeds each flattened box pair and runs a GRU; its last state is
squeezed through a small bottleneck. The decoder then emits, step by step,
the anchor-relative transforms for both boxes, feeding back its previous
output next to the latent code (a learned start vector opens the sequence).
The first pair of boxes in the window serves as the two anchors.

Reconstruction quality is measured with a height- and jitter-scaled RMSE,
which is both the training loss and the per-pair anomaly score.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from . import nn
from .core import ScoreSeries, VideoRecord, distance_score, lowpass_filter

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InteractionConfig:
    t_int: int = 3
    n_max: int = 20
    latent_dim: int = 4
    hidden: int = 128
    encoder_mlp: tuple = (32, 64)
    decoder_out_mlp: tuple = (64, 8)
    tau_std: float = 1e-3
    fps: float | None = None  # None: use the video's frame rate
    cutoff: float = 0.2
    order: int = 2
    batch: int = 64
    lr: float = 2e-4
    epochs: int = 10
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.t_int < 2:
            raise ValueError("t_int must be >= 2")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.tau_std <= 0:
            raise ValueError("tau_std must be > 0")
        if self.decoder_out_mlp[-1] != 8:
            raise ValueError("the decoder must end in 8 outputs (two 4-parameter transforms)")

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PairWindow:
    ids: tuple
    start: int
    stop: int
    boxes_i: np.ndarray
    boxes_j: np.ndarray
    ds: float = 0.0

    def as_array(self) -> np.ndarray:
        """``(t_int, 2, 4)``: object ``i`` first, then ``j``."""
        return np.stack([self.boxes_i, self.boxes_j], axis=1)


def select_pairs(tracks, t: int, config: InteractionConfig) -> list[PairWindow]:
    """The ``n_max`` closest pairs (by distance score) present on frames ``t-t_int+1..t``.

    Ties are broken by ascending ``(i, j)``; ids inside a pair are ascending.
    """
    start = t - config.t_int + 1
    if start < 0:
        return []
    present = sorted((tr for tr in tracks if tr.covers(start, t)), key=lambda tr: tr.object_id)
    cands = []
    for a, b in combinations(present, 2):
        wa, wb = a.window(start, t), b.window(start, t)
        cands.append((distance_score(wa, wb), a.object_id, b.object_id, wa, wb))
    cands.sort(key=lambda c: (c[0], c[1], c[2]))
    return [PairWindow((i, j), start, t, wa, wb, ds) for ds, i, j, wa, wb in cands[: config.n_max]]


# -- model --------------------------------------------------------------------


def init_params(config: InteractionConfig, seed: int) -> nn.ParamStore:
    rng = np.random.default_rng(seed)
    store = nn.ParamStore()
    e1 = config.encoder_mlp[-1]
    nn.init_mlp(store, "enc_embed", 8, config.encoder_mlp, rng)
    nn.init_gru(store, "enc_gru", e1, config.hidden, rng)
    nn.init_mlp(store, "bottleneck", config.hidden, (config.latent_dim,), rng)
    nn.init_mlp(store, "dec_embed", 8 + config.latent_dim, config.encoder_mlp, rng)
    nn.init_gru(store, "dec_gru", e1, config.hidden, rng)
    nn.init_mlp(store, "dec_out", config.hidden, config.decoder_out_mlp, rng)
    store.add("sos", rng.uniform(-1, 1, size=8) / np.sqrt(8))
    return store


def _relus(n):
    return ("relu",) * n


def forward(params, windows: np.ndarray, config: InteractionConfig):
    """Reconstruct a batch of pair windows.

    ``windows`` is ``(B, T, 2, 4)``. Returns ``(boxes, transforms)``: lists of
    ``T`` tensors shaped ``(B, 8)`` in box space and transform space.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 4 or windows.shape[1] != config.t_int or windows.shape[2:] != (2, 4):
        raise ValueError(f"expected windows of shape (B, {config.t_int}, 2, 4), got {windows.shape}")
    B, T = windows.shape[:2]
    n_enc = len(config.encoder_mlp)
    h = nn.Tensor(np.zeros((B, config.hidden)))
    for k in range(T):
        e = nn.mlp_apply(windows[:, k].reshape(B, 8), params, "enc_embed", _relus(n_enc))
        h = nn.gru_step(e, h, params, "enc_gru")
    z = nn.mlp_apply(h, params, "bottleneck", ("relu",))

    anchors = windows[:, 0].reshape(B, 8)
    a_xy = anchors[:, [0, 1, 4, 5]]
    a_wh = anchors[:, [2, 3, 6, 7]]
    prev = nn.add(np.zeros((B, 8)), params["sos"])
    hd = nn.Tensor(np.zeros((B, config.hidden)))
    out_acts = _relus(len(config.decoder_out_mlp) - 1) + (None,)
    boxes, transforms = [], []
    for _ in range(T):
        e = nn.mlp_apply(nn.concat([prev, z], axis=1), params, "dec_embed", _relus(n_enc))
        hd = nn.gru_step(e, hd, params, "dec_gru")
        p = nn.mlp_apply(hd, params, "dec_out", out_acts)
        xy = nn.add(a_xy, p[:, [0, 1, 4, 5]])
        wh = nn.mul(a_wh, nn.exp(p[:, [2, 3, 6, 7]]))
        boxes.append(nn.concat([xy[:, 0:2], wh[:, 0:2], xy[:, 2:4], wh[:, 2:4]], axis=1))
        transforms.append(p)
        prev = p
    return boxes, transforms


def reconstruct_pair(pair: PairWindow, params, config: InteractionConfig) -> np.ndarray:
    """Reconstructed ``(t_int, 2, 4)`` boxes for one pair window."""
    if pair.boxes_i.shape[0] != config.t_int:
        raise ValueError(f"window length {pair.boxes_i.shape[0]} != t_int {config.t_int}")
    p = params.leaves(requires_grad=False) if isinstance(params, nn.ParamStore) else params
    boxes, _ = forward(p, pair.as_array()[None], config)
    return np.stack([b.value[0].reshape(2, 4) for b in boxes])


def loss_weights(windows: np.ndarray, tau_std: float) -> np.ndarray:
    """Per-window ``1 / (lambda_h * lambda_std)`` for ``(B, T, 2, 4)`` windows."""
    windows = np.asarray(windows, dtype=float)
    lam_h = windows[..., 3].mean(axis=(1, 2))
    lam_std = np.maximum(windows.std(axis=1).mean(axis=(1, 2)), tau_std)
    return 1.0 / (lam_h * lam_std)


def pair_loss(original, reconstructed, tau_std: float = 1e-3) -> float:
    """Scaled RMSE between two ``(T, 2, 4)`` pair windows."""
    original = np.asarray(original, dtype=float)
    reconstructed = np.asarray(reconstructed, dtype=float)
    if original.shape != reconstructed.shape:
        raise ValueError(f"shape mismatch {original.shape} vs {reconstructed.shape}")
    return float(pair_losses(original[None], reconstructed[None], tau_std)[0])


def pair_losses(original, reconstructed, tau_std: float) -> np.ndarray:
    """Vectorized :func:`pair_loss` over a leading batch axis."""
    c = loss_weights(original, tau_std)
    sq = ((reconstructed - original) ** 2).sum(axis=-1)  # (B, T, 2)
    return np.sqrt(c[:, None, None] * sq).sum(axis=(1, 2))


def batch_loss(params, windows, config: InteractionConfig, eps: float = 1e-12) -> nn.Tensor:
    """Differentiable mean pair loss; ``eps`` keeps sqrt smooth at zero error."""
    windows = np.asarray(windows, dtype=float)
    boxes, _ = forward(params, windows, config)
    c = loss_weights(windows, config.tau_std)[:, None]
    B = windows.shape[0]
    total = None
    for k, b in enumerate(boxes):
        target = windows[:, k].reshape(B, 8)
        sq = nn.square(nn.sub(b, target))
        per_obj = nn.concat([nn.sum_(sq[:, 0:4], axis=1)[:, None], nn.sum_(sq[:, 4:8], axis=1)[:, None]], axis=1)
        term = nn.sum_(nn.sqrt(nn.add(nn.mul(per_obj, c), eps)))
        total = term if total is None else nn.add(total, term)
    return nn.mul(total, 1.0 / B)


# -- training and scoring -----------------------------------------------------


def collect_windows(videos, config: InteractionConfig) -> np.ndarray:
    """All selected pair windows (stride one frame) as ``(N, T, 2, 4)``."""
    out = []
    for v in videos:
        for t in range(config.t_int - 1, v.num_frames):
            out.extend(p.as_array() for p in select_pairs(v.tracks, t, config))
    return np.array(out, dtype=float).reshape(-1, config.t_int, 2, 4)


def train_interaction(videos, config: InteractionConfig, seed: int, params=None):
    """Fit the autoencoder on normal videos with Adam; returns ``(params, history)``.

    ``history`` holds one dict per epoch with train and validation loss.
    """
    windows = collect_windows(videos, config)
    if len(windows) == 0:
        raise ValueError("no trajectory pairs found in the training videos (need >= 2 tracks sharing a window)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(windows))
    n_val = int(round(config.val_fraction * len(windows))) if len(windows) > 10 else 0
    val, train = windows[perm[:n_val]], windows[perm[n_val:]]
    params = params or init_params(config, seed)
    state = nn.AdamState()
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(train), config.batch):
            batch = train[order[i : i + config.batch]]
            loss, grads = nn.grad(lambda p: batch_loss(p, batch, config), params)
            nn.adam_step(params, grads, state, config.lr)
            total += loss * len(batch)
        rec = {"epoch": epoch + 1, "train_loss": total / len(train)}
        if n_val:
            rec["val_loss"] = float(window_losses(params, val, config).mean())
        history.append(rec)
        log.info("stage=train expert=interaction epoch=%d train_loss=%.6g val_loss=%s wall=%.2fs",
                 epoch + 1, rec["train_loss"], rec.get("val_loss", "nan"), time.perf_counter() - t0)
    return params, history


def window_losses(params, windows, config: InteractionConfig, chunk: int = 4096) -> np.ndarray:
    p = params.leaves(requires_grad=False) if isinstance(params, nn.ParamStore) else params
    out = []
    for i in range(0, len(windows), chunk):
        w = windows[i : i + chunk]
        boxes, _ = forward(p, w, config)
        rec = np.stack([b.value.reshape(len(w), 2, 4) for b in boxes], axis=1)
        out.append(pair_losses(w, rec, config.tau_std))
    return np.concatenate(out) if out else np.zeros(0)


def raw_interaction_scores(video: VideoRecord, params, config: InteractionConfig) -> np.ndarray:
    """Unfiltered per-frame mean pair loss; 0 where no pair is available."""
    frames, windows = [], []
    for t in range(config.t_int - 1, video.num_frames):
        for p in select_pairs(video.tracks, t, config):
            frames.append(t)
            windows.append(p.as_array())
    raw = np.zeros(video.num_frames)
    if windows:
        losses = window_losses(params, np.array(windows), config)
        frames = np.array(frames)
        sums = np.bincount(frames, weights=losses, minlength=video.num_frames)
        counts = np.bincount(frames, minlength=video.num_frames)
        np.divide(sums, counts, out=raw, where=counts > 0)
    return raw


def score_interaction(video: VideoRecord, params, config: InteractionConfig) -> ScoreSeries:
    raw = raw_interaction_scores(video, params, config)
    series = ScoreSeries(video.video_id, raw, config.t_int - 1)
    return lowpass_filter(series, config.fps or video.fps, config.cutoff, config.order)
