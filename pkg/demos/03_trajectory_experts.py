"""
Training the two trajectory experts on synthetic traffic
========================================================

A small run: a few normal clips for training, then one clip of each anomaly
kind. Networks are tiny so this finishes in about a minute; scores are
therefore rough.
"""

import numpy as np

from xenad import behavior, interaction, simgen
from xenad.simgen import ScenarioSpec

train, _ = simgen.generate_dataset(30, 1, {}, seed=0, num_frames=100)
print("training clips:", len(train), "tracks:", sum(len(v.tracks) for v in train))

icfg = interaction.InteractionConfig(hidden=32, encoder_mlp=(16, 16), decoder_out_mlp=(16, 8), epochs=3, lr=2e-3)
bcfg = behavior.BehaviorConfig(hidden=32, box_encoder_mlp=(32, 16), decoder_out_mlp=(16, 4), epochs=8, lr=2e-3)
ip, ihist = interaction.train_interaction(train, icfg, seed=0)
bp, bhist = behavior.train_behavior(train, bcfg, seed=0)
print("interaction loss by epoch:", [round(h["train_loss"], 3) for h in ihist])
print("behavior MSE by epoch:   ", [f"{h['train_loss']:.2e}" for h in bhist])


def show(kind):
    v = simgen.generate_video(ScenarioSpec(seed=7, num_frames=100, anomaly_kind=kind,
                                           anomaly_start_frac=0.4, anomaly_end_frac=0.6))
    s_int = interaction.score_interaction(v, ip, icfg).scores
    s_beh = behavior.score_behavior(v, bp, bcfg).scores
    lab = v.frame_labels.astype(bool)
    out = lambda s: f"{s[10:][~lab[10:]].mean():.4f} / {s[lab].mean():.4f}" if lab.any() else f"{s[10:].mean():.4f}"
    print(f"{kind:>15}  interaction {out(s_int):>17}   behavior {out(s_beh):>17}")


print("\nmean score outside / inside the labeled frames")
for kind in simgen.ANOMALY_KINDS:
    show(kind)

# Pair selection: the closest pairs by distance score at one frame.
v = simgen.generate_video(ScenarioSpec(seed=7, num_frames=100, anomaly_kind="pair_collision",
                                       anomaly_start_frac=0.4, anomaly_end_frac=0.6))
for p in interaction.select_pairs(v.tracks, 55, icfg):
    print("frame 55 pair", p.ids, "distance score", round(p.ds, 4))
