"""
Why per-video min-max scaling flatters a detector
=================================================

Two five-frame videos share the labels 0 0 1 1 1. Video B scores every frame
higher than video A, so A's anomalous frames sit below B's normal ones.
"""

import numpy as np

from xenad import evalkit

labels = np.array([0, 0, 1, 1, 1])
videos = [
    ("A", np.array([0.3, 0.5, 0.6, 0.7, 0.6]), labels),
    ("B", np.array([1.2, 1.0, 1.6, 2.0, 1.8]), labels),
]

# Concatenating raw scores keeps the offset between the videos.
raw = evalkit.evaluate(videos, "raw", tau=1.1)
print("raw protocol     AUC", raw.auc)

# Rescaling each video to [0, 1] first hides it.
legacy = evalkit.evaluate(videos, "legacy_minmax", tau=0.5)
print("min-max protocol AUC", legacy.auc)

# The raw number is the share of (anomalous, normal) frame pairs ranked correctly.
s = np.concatenate([v[1] for v in videos])
y = np.concatenate([v[2] for v in videos]).astype(bool)
pairs = (s[y][:, None] > s[~y][None, :]).mean()
print("pairs ranked correctly", pairs)

print()
print(evalkit.format_report(raw))
