"""Full CLI walkthrough on a generated dataset.

Builds a small mock dataset on disk, then drives the command-line interface:
simulate-defects -> refine -> eval -> adapt-iou -> refine with the adapted
selector. Everything lands in ./demo_out.

Run: python3 demos/06_cli_walkthrough.py
"""

import json
import shutil
from pathlib import Path

from maskforge.cli import main
from maskforge.datasets import save_image_png, save_mask_png
from maskforge.segmenter import save_scene
from maskforge.synth import refinement_case, render_scene_image

root = Path("demo_out")
if root.exists():
    shutil.rmtree(root)
(root / "images").mkdir(parents=True)
(root / "gt").mkdir()
(root / "scenes").mkdir()

for k in range(6):
    case = refinement_case(500 + k, "mild")
    name = f"img{k:03d}"
    save_image_png(render_scene_image(case.scene), root / "images" / f"{name}.png")
    save_scene(case.scene, root / "scenes" / f"{name}.json")
    for sid, gt_mask, _ in case.instances:
        save_mask_png(gt_mask, root / "gt" / f"{name}__{sid}.png")

def run(args):
    print("$ maskforge " + " ".join(args))
    code = main(args)
    assert code == 0, f"exit {code}"
    print()

run(["simulate-defects", "--images", f"{root}/images", "--gt", f"{root}/gt",
     "--gt-format", "instance_png", "--seed", "1", "--out", f"{root}/coarse"])

run(["refine", "--images", f"{root}/images", "--masks", f"{root}/coarse/masks",
     "--mask-format", "instance_png", "--gt", f"{root}/gt",
     "--gt-format", "instance_png", "--backend", f"mock:{root}/scenes",
     "--seed", "1", "--jobs", "4", "--out", f"{root}/refined"])

run(["eval", "--pred", f"{root}/refined/masks", "--gt", f"{root}/gt",
     "--mode", "instance", "--out", f"{root}/eval"])

run(["adapt-iou", "--images", f"{root}/images", "--masks", f"{root}/coarse/masks",
     "--mask-format", "instance_png", "--backend", f"mock:{root}/scenes",
     "--seed", "1", "--out", f"{root}/adaptor.json"])

run(["refine", "--images", f"{root}/images", "--masks", f"{root}/coarse/masks",
     "--mask-format", "instance_png", "--gt", f"{root}/gt",
     "--gt-format", "instance_png", "--backend", f"mock:{root}/scenes",
     "--selector", "adapted", "--adaptor", f"{root}/adaptor.json",
     "--seed", "1", "--out", f"{root}/refined_adapted"])

for run_dir in ("refined", "refined_adapted"):
    report = json.loads((root / run_dir / "report.json").read_text())
    agg = report["aggregates"]
    print(f"{run_dir}: mean IoU {agg['mean_iou']:.3f}, "
          f"top-1 {agg.get('top1')}")
