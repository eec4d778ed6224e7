"""
From four raw score streams to one fused score
==============================================

Each expert speaks in its own units: negative PSNR around -30, a
reconstruction loss around 50, trajectory losses near 1. A density fit on
normal scores puts them on a common scale and a Kalman filter merges them.
"""

import numpy as np

from xenad import fusion
from xenad.core import ScoreSeries, lowpass_array

rng = np.random.default_rng(0)

# Normal training scores for the four experts.
normal = [
    rng.normal(-30.0, 1.5, 4000),        # frame prediction (negative PSNR)
    rng.lognormal(np.log(50), 0.1, 4000),  # scene reconstruction loss
    rng.lognormal(0.0, 0.3, 4000),       # interaction
    rng.lognormal(-4.0, 0.4, 4000),      # behavior
]
stats = [fusion.fit_normalizer(x) for x in normal]
for name, st in zip(fusion.EXPERTS, stats):
    print(f"{name}: mu={st.mu:9.4f} sigma={st.sigma:8.4f} tau95={st.tau:9.4f} shift={st.shift:.3f}")

# The negative PSNR needed a shift; the estimated density has no mass below it.
kde = fusion.LogKDE(normal[0], stats[0].shift)
print("pdf just below the support:", kde.pdf(np.array([-stats[0].shift - 1e-3]))[0])

# A test video: both trajectory experts react between frames 60 and 90.
T = 150
labels = np.zeros(T, dtype=int)
labels[60:90] = 1
test = [rng.normal(-30.0, 1.5, T), rng.lognormal(np.log(50), 0.1, T),
        rng.lognormal(0.0, 0.3, T) + 3.0 * labels, rng.lognormal(-4.0, 0.4, T) + 0.08 * labels]
# trajectory experts smooth their raw stream before fusion
test[2] = lowpass_array(test[2], fps=10.0)
test[3] = lowpass_array(test[3], fps=10.0)
series = [ScoreSeries("demo", s, vf) for s, vf in zip(test, (4, 3, 2, 2))]

for mode in ("immediate", "deferred"):
    res = fusion.fuse(series, stats, mode)
    s = res.series.scores
    print(f"{mode:>9}: mean fused score normal={s[labels == 0].mean():6.3f} anomalous={s[labels == 1].mean():6.3f}")

threshold = fusion.ensemble_threshold(stats)
res = fusion.fuse(series, stats)
print("ensemble threshold", round(threshold, 3))
print("frames above it:", np.flatnonzero(res.series.scores > threshold).tolist())
print("classified as", fusion.classify_video(res.states))
