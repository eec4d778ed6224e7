"""Score normalization, Kalman-filter fusion of the four experts, ego/non-ego split.

Each expert's normal-score distribution is estimated with a Gaussian KDE on
``log(s + shift)`` so the density lives on positive values. The shift moves
the smallest sample to one sample STD above zero and is zero when the scores
already sit that far from it; negative PSNR, for instance, needs it.
Mean, standard deviation and the upper-alpha threshold come from quadrature
of that density and are reported in raw score units.

Fusion treats the four normalized scores as noisy observations of a
5-dimensional state ``[x_ffp, x_str, x_int, x_beh, s]`` where ``s`` is the
average of the other four.
"""

from __future__ import annotations

import configparser
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import gaussian_kde

from .core import ScoreSeries

log = logging.getLogger(__name__)

EXPERTS = ("ffp", "str", "int", "beh")
SIGMA_FLOOR = 1e-6
GRID_POINTS = 8192

A = np.eye(5)
A[4] = [0.25, 0.25, 0.25, 0.25, 0.0]
H = np.eye(4, 5)
Q = 0.1 * np.eye(5)
R = np.eye(4)
P_INIT = 0.1 * np.eye(5)


@dataclass(frozen=True)
class NormalizationStats:
    mu: float
    sigma: float
    tau: float
    shift: float = 0.0
    bandwidth: float = 0.0
    alpha: float = 0.95

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not math.isfinite(self.tau):
            raise ValueError("tau must be finite")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


class LogKDE:
    """Gaussian KDE in ``y = log(x + shift)`` space."""

    def __init__(self, samples, shift: float):
        self.shift = float(shift)
        self.y = np.log(np.asarray(samples, dtype=float) + self.shift)
        self._kde = gaussian_kde(self.y, bw_method="silverman")
        self.bandwidth = float(np.sqrt(self._kde.covariance[0, 0]))

    def grid(self, points: int = GRID_POINTS):
        pad = 6.0 * self.bandwidth
        y = np.linspace(self.y.min() - pad, self.y.max() + pad, points)
        return y, self._kde(y)

    def pdf(self, x) -> np.ndarray:
        """Density of the raw score; zero at or below ``-shift``."""
        x = np.asarray(x, dtype=float)
        u = x + self.shift
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = self._kde(np.log(u[pos])) / u[pos]
        return out


def _shift_for(samples: np.ndarray) -> float:
    sd = float(samples.std())
    eps = sd if sd > 0 else 1.0
    return max(0.0, eps - float(samples.min()))


def fit_normalizer(normal_scores, alpha: float = 0.95) -> NormalizationStats:
    """KDE-based mean, STD and upper-alpha threshold of normal scores."""
    x = np.asarray(normal_scores, dtype=float).ravel()
    if len(x) < 30:
        raise ValueError(f"need at least 30 normal scores, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("normal scores contain non-finite values")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    shift = _shift_for(x)
    y = np.log(x + shift)
    if np.ptp(y) == 0:
        warnings.warn("all normal scores are equal; sigma floored at 1e-6", RuntimeWarning, stacklevel=2)
        return NormalizationStats(float(x[0]), SIGMA_FLOOR, float(x[0]), shift, 0.0, alpha)
    kde = LogKDE(x, shift)
    grid, g = kde.grid()
    z = np.trapezoid(g, grid)
    raw = np.exp(grid) - shift
    mu = float(np.trapezoid(raw * g, grid) / z)
    var = float(np.trapezoid((raw - mu) ** 2 * g, grid) / z)
    sigma = math.sqrt(max(var, 0.0))
    if sigma < SIGMA_FLOOR:
        warnings.warn(f"normal-score STD {sigma:.3g} floored at 1e-6", RuntimeWarning, stacklevel=2)
        sigma = SIGMA_FLOOR
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(grid))]) / z
    tau = float(np.exp(np.interp(alpha, cdf, grid)) - shift)
    return NormalizationStats(mu, sigma, tau, shift, kde.bandwidth, alpha)


def normalize(score, stats: NormalizationStats):
    return (np.asarray(score, dtype=float) - stats.mu) / stats.sigma


def ensemble_threshold(stats) -> float:
    """Average of the four experts' normalized thresholds."""
    stats = list(stats)
    if len(stats) != 4:
        raise ValueError("need stats for exactly four experts")
    return 0.25 * sum((s.tau - s.mu) / s.sigma for s in stats)


# -- Kalman filter ------------------------------------------------------------


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray  # (5,)
    P: np.ndarray  # (5, 5)

    @property
    def score(self) -> float:
        return float(self.x[4])


def _obs(y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (4,):
        raise ValueError(f"expected 4 observations, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"non-finite observation {y}")
    return y


def kalman_init(obs) -> KalmanState:
    """State from one observation vector: the four scores and their mean."""
    y = _obs(obs)
    return KalmanState(np.append(y, 0.25 * y.sum()), P_INIT.copy())


def kalman_step(state: KalmanState, obs) -> KalmanState:
    """One predict/update cycle."""
    y = _obs(obs)
    x_pred = A @ state.x
    P_pred = A @ state.P @ A.T + Q
    S = H @ P_pred @ H.T + R
    K = np.linalg.solve(S, H @ P_pred).T  # P_pred H^T S^-1 with S, P_pred symmetric
    x = x_pred + K @ (y - H @ x_pred)
    P = (np.eye(5) - K @ H) @ P_pred
    return KalmanState(x, 0.5 * (P + P.T))


@dataclass(frozen=True)
class FusedResult:
    series: ScoreSeries
    states: np.ndarray  # (T, 5)
    observations: np.ndarray  # (T, 4) normalized


def fuse(series, stats, mode: str = "immediate") -> FusedResult:
    """Normalize and fuse four ScoreSeries ordered ``ffp, str, int, beh``.

    Frames before an expert's ``valid_from`` take that expert's normal mean.
    ``immediate`` initializes on frame 0 and filters from frame 1 on;
    ``deferred`` re-initializes on every frame up to the last expert's
    ``valid_from`` and filters afterwards.
    """
    series, stats = list(series), list(stats)
    if len(series) != 4 or len(stats) != 4:
        raise ValueError("fuse needs four series and four stats (ffp, str, int, beh)")
    T = len(series[0])
    if any(len(s) != T for s in series):
        raise ValueError(f"series lengths differ: {[len(s) for s in series]}")
    if mode not in ("immediate", "deferred"):
        raise ValueError(f"mode must be 'immediate' or 'deferred', got {mode!r}")
    obs = np.column_stack(
        [normalize(s.with_assigned_prefix(st.mu).scores, st) for s, st in zip(series, stats)]
    ).reshape(T, 4)
    start = max(s.valid_from for s in series)
    init_until = 0 if mode == "immediate" else min(start, T - 1)
    states = np.zeros((T, 5))
    state = None
    for t in range(T):
        state = kalman_init(obs[t]) if t <= init_until else kalman_step(state, obs[t])
        states[t] = state.x
    out = ScoreSeries(series[0].video_id, states[:, 4], min(start, T))
    return FusedResult(out, states, obs)


def classify_video(states, top_frac: float = 0.1) -> str:
    """``"ego"`` when the scene states dominate the trajectory states.

    Each state is summarized by the mean of its top ``ceil(top_frac * T)``
    values; ties go to ``"non-ego"``.
    """
    x = np.asarray(states, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] < 4:
        raise ValueError("need a non-empty (T, >=4) state history")
    k = math.ceil(top_frac * x.shape[0])
    m = np.sort(x[:, :4], axis=0)[-k:].mean(axis=0)
    return "ego" if m[0] + m[1] > m[2] + m[3] else "non-ego"


# -- persistence --------------------------------------------------------------

STATS_KEYS = ("mu", "sigma", "tau", "shift", "bandwidth", "alpha")


def save_stats(stats: dict, path) -> None:
    """Key-value text file, one section per expert."""
    cp = configparser.ConfigParser()
    for name, st in stats.items():
        cp[name] = {k: repr(float(getattr(st, k))) for k in STATS_KEYS}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        cp.write(fh)


def load_stats(path) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(f"stats file {path} not found")
    out = {}
    for name in cp.sections():
        try:
            out[name] = NormalizationStats(**{k: float(cp[name][k]) for k in STATS_KEYS})
        except KeyError as exc:
            raise ValueError(f"{path}: section [{name}] lacks key {exc}") from exc
    return out
