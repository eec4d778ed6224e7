"""Ensemble anomaly detection for driving scenes from box trajectories and scene scores.

Modules: ``core`` (boxes, tracks, filters), ``simgen`` (synthetic data),
``nn`` (small autodiff toolkit), ``interaction`` and ``behavior`` (trajectory
experts), ``scene`` (scene score arithmetic), ``fusion`` (normalization and
Kalman fusion), ``evalkit`` (metrics) and ``cli``.
"""

__version__ = "0.1.0"
