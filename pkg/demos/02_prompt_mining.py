"""Mining prompts from a defective coarse mask.

Shows how the positive click stays in the object body despite a distant
false-positive speck, how the elastic box recovers a truncated side, and what
the soft mask looks like.

Run: python3 demos/02_prompt_mining.py
"""

import numpy as np

from maskforge import ExcavationConfig, excavate, tight_box
from maskforge.rasters import disk
from maskforge.segmenter import MockSegmenter, OracleScene

h = w = 64
shape = disk(14, 32, 30, h, w)
scene = OracleScene(w, h, ((1, shape),), feature_dim=8, seed=3)
backend = MockSegmenter(scene, noise_amplitude=0.0)
emb = backend.embed()

# coarse mask: right third of the object missing (false negatives)
coarse = shape.copy()
coarse[:, 38:] = False

prompts = excavate(coarse, emb, ExcavationConfig())

print("tight box of coarse:  ", tight_box(coarse))
print("elastic box:          ", prompts.box,
      "(right edge pushed toward the missing part)")

# a distant false-positive speck distorts the box but not the click
speckled = coarse.copy()
speckled[5, 60] = True
speck_prompts = excavate(speckled, emb, ExcavationConfig())
print("tight box with speck: ", tight_box(speckled))
print("positive click:       ", (speck_prompts.positive.x, speck_prompts.positive.y),
      "inside object:", bool(shape[speck_prompts.positive.y, speck_prompts.positive.x]))
if speck_prompts.negative is not None:
    print("negative click:       ", (speck_prompts.negative.x, speck_prompts.negative.y))
else:
    print("negative click:        none (no deep in-box background)")
sm = prompts.soft_mask
print(f"soft mask: peak {sm.data.max():.1f} at ({sm.center.x}, {sm.center.y}), "
      f"support {int((sm.data > 0).sum())} px")
print("canonical JSON:", prompts.to_json()[:120], "...")
