"""Generate a few scenes, look at the rule-based teacher, and draw one frame.

Run:  python demos/01_scene_and_teacher.py [out_dir]
"""

import sys
from pathlib import Path

from radcam import plotting, teacher
from radcam.infereval import evaluate_frames
from radcam.scenesim import SensorNoiseConfig, SimConfig, generate_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# Clean scenes with well-separated objects: the geometric rule should be perfect.
clean = generate_dataset(SimConfig(n_frames=50, min_separation=3.0, noise=SensorNoiseConfig.noiseless()), seed=1)
cfg = teacher.TeacherConfig()
preds = [teacher.associate_rule_based(f, cfg) for f in clean]
print("noiseless teacher P/R/F1:", evaluate_frames(preds, clean).summary())

# Realistic noise: jittered pins and boxes, clutter, dropouts.
noisy = generate_dataset(SimConfig(n_frames=200), seed=2)
raw = [teacher.associate_rule_based(f, cfg) for f in noisy]
pure = [teacher.purify(a, cfg) for a in raw]
print("noisy teacher      P/R/F1:", evaluate_frames(raw, noisy).summary())
print("after purification P/R/F1:", evaluate_frames(pure, noisy).summary())

# Deliberately corrupted labels emulate a weak teacher (F1 near 0.8).
weak = teacher.TeacherConfig(corruption=teacher.CorruptionConfig(enabled=True, flip_prob=0.15))
corrupted = [teacher.teach_frame(f, weak, seed=0, purified=False) for f in noisy]
print("corrupted teacher  P/R/F1:", evaluate_frames(corrupted, noisy).summary())

frame = noisy[0]
(out / "scene.svg").write_text(plotting.scene_svg(frame))
(out / "bev.svg").write_text(plotting.bev_svg(frame, raw[0]))
print(f"wrote {out / 'scene.svg'} and {out / 'bev.svg'}")
