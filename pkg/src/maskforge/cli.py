"""Command-line interface.

Subcommands: refine, eval, adapt-iou, simulate-defects, backend-check.
Exit codes: 0 success, 1 runtime failure, 2 usage error. All randomness flows
from --seed (env MASKFORGE_SEED as fallback); equal seeds and inputs give
byte-identical outputs, and --jobs N output is identical to --jobs 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .adaption import (
    TrainConfig,
    build_training_set,
    load_adaptor,
    save_adaptor,
    top1_on_samples,
    train,
)
from .config import (
    ConfigError,
    defect_spec_from,
    load_config_file,
    refine_config_from,
    train_config_from,
)
from .datasets import (
    DatasetSpec,
    IngestError,
    InstanceRecord,
    MaskSource,
    SemanticRecord,
    ingest,
    load_label_png,
    load_mask_png,
    rle_to_coco,
    save_label_png,
    save_mask_png,
)
from .defects import DefectSpec, simulate_defects
from .metrics import ConfusionAccumulator, EvalReport, boundary_iou, iou, top1_accuracy
from .pipeline import RefineConfig, refine_instance, refine_semantic, selector_scores
from .segmenter import MockSegmenter, load_scene
from .defects import SimulationError

REPORT_SCHEMA_VERSION = 1


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Backend resolution
# ---------------------------------------------------------------------------

def make_backend_factory(spec: str, mock_noise: float):
    """'mock:<scene file or dir>' or 'neural:<manifest>'.

    Returns a callable image-stem -> backend. A mock scene directory maps
    <stem>.json per image; a single scene file serves every image.
    """
    kind, _, path = spec.partition(":")
    if not path:
        raise CliError(f"--backend needs kind:path, got {spec!r}")
    if kind == "mock":
        p = Path(path)
        if p.is_dir():
            def factory(stem: str):
                scene_path = p / f"{stem}.json"
                if not scene_path.is_file():
                    raise CliError(f"no scene file for image {stem!r}: {scene_path}")
                return MockSegmenter(load_scene(scene_path), noise_amplitude=mock_noise)
            return factory
        scene = load_scene(p)
        return lambda stem: MockSegmenter(scene, noise_amplitude=mock_noise)
    if kind == "neural":
        from .neural import load_neural
        backend = load_neural(path)
        return lambda stem: backend
    raise CliError(f"unknown backend kind {kind!r} (want mock: or neural:)")


def _mask_source(path: str, fmt: str) -> MaskSource:
    return MaskSource(format=fmt, path=Path(path))


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MASKFORGE_SEED")
    return int(env) if env else 0


def _dump_json(payload: dict, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# refine
# ---------------------------------------------------------------------------

def _refine_record_instance(record: InstanceRecord, backend, cfg: RefineConfig,
                            adaptor, band_width):
    emb = backend.embed(record.image)
    outputs = []
    for tid, coarse in record.targets:
        gt = record.gt.get(tid) if record.gt else None
        result = refine_instance(backend, emb, coarse, cfg, gt=gt, adaptor=adaptor)
        row = {"image": record.name, "target": tid,
               "chosen_index": result.chosen_index}
        if result.per_iteration:
            last = result.per_iteration[-1]
            row["selector_score"] = last.chosen_score
            if gt is not None:
                gt_ious = [iou(m, gt) for m in last.output.masks]
                scores = {"predicted": list(map(float, last.output.iou_pred))}
                scores["coarse_iou"] = [iou(m, coarse) for m in last.output.masks]
                if adaptor is not None:
                    scores["adapted"] = [float(v) for v in selector_scores(
                        last.output, "adapted", adaptor=adaptor)]
                row["_top1_record"] = (scores, gt_ious)
        if "warning" in result.diagnostics:
            row["warning"] = result.diagnostics["warning"]
        if gt is not None:
            row["coarse_iou"] = iou(coarse, gt)
            row["iou"] = iou(result.refined, gt)
            row["boundary_iou"] = boundary_iou(result.refined, gt, band_width)
        outputs.append((tid, result.refined, row))
    return outputs


def cmd_refine(args) -> int:
    cfg = RefineConfig()
    if args.config:
        payload = load_config_file(args.config)
        cfg = refine_config_from(payload.get("refine", {}))
    overrides = {}
    if args.selector:
        overrides["selector"] = args.selector
    if args.iterations:
        overrides["iterations"] = args.iterations
    if args.prompts:
        overrides["prompts_enabled"] = frozenset(args.prompts.split(","))
    if overrides:
        cfg = replace(cfg, **overrides)
    adaptor = load_adaptor(args.adaptor) if args.adaptor else None
    if cfg.selector == "adapted" and adaptor is None:
        raise CliError("--selector adapted needs --adaptor FILE")

    mode = args.mode or ("semantic" if args.mask_format == "label_png" else "instance")
    spec = DatasetSpec(
        mode=mode, image_dir=Path(args.images),
        masks=_mask_source(args.masks, args.mask_format),
        gt=_mask_source(args.gt, args.gt_format) if args.gt else None)
    factory = make_backend_factory(args.backend, args.mock_noise)
    records = list(ingest(spec))
    out_dir = Path(args.out)

    report = EvalReport(schema_version=REPORT_SCHEMA_VERSION)
    index = []
    top1_records = []

    if mode == "instance":
        def work(record):
            return _refine_record_instance(record, factory(record.name), cfg,
                                           adaptor, args.band_width)

        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            results = list(pool.map(work, records))
        for record, outputs in zip(records, results):
            for tid, refined, row in outputs:
                save_mask_png(refined, out_dir / "masks" / f"{record.name}__{tid}.png")
                entry = {"image": record.name, "target": tid,
                         "rle": rle_to_coco(refined),
                         "chosen_index": row["chosen_index"]}
                index.append(entry)
                t1 = row.pop("_top1_record", None)
                if t1 is not None:
                    top1_records.append(t1)
                report.add_row(**row)
    else:
        def work(record):
            backend = factory(record.name)
            return refine_semantic(backend, record.image, record.labels, cfg,
                                   adaptor=adaptor)

        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            results = list(pool.map(work, records))
        num_classes = 1 + max((int(r.labels.max()) for r in records), default=0)
        for record, refined in zip(records, results):
            save_label_png(refined, out_dir / "labels" / f"{record.name}.png")
            index.append({"image": record.name,
                          "classes": sorted(int(c) for c in np.unique(refined) if c)})
            row = {"image": record.name}
            if record.gt is not None:
                num_classes = max(num_classes, int(record.gt.max()) + 1)
                acc = ConfusionAccumulator(num_classes)
                acc.update(refined, record.gt)
                row["mean_class_iou"] = acc.mean()
            report.add_row(**row)

    if top1_records:
        report.top1 = top1_accuracy(top1_records)
    _dump_json({"schema_version": REPORT_SCHEMA_VERSION, "entries": index},
               out_dir / "index.json")
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    (out_dir / "report.csv").write_text(report.to_csv())
    print(f"refined {sum(len(r.targets) if isinstance(r, InstanceRecord) else 1 for r in records)} "
          f"targets across {len(records)} images -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    out_dir = Path(args.out)
    report = EvalReport(schema_version=REPORT_SCHEMA_VERSION)
    if args.mode == "instance":
        files = sorted(pred_dir.glob("*__*.png"))
        if not files:
            raise CliError(f"no instance masks in {pred_dir}")
        for f in files:
            pred = load_mask_png(f)
            gt = load_mask_png(gt_dir / f.name)
            report.add_row(id=f.stem, iou=iou(pred, gt),
                           boundary_iou=boundary_iou(pred, gt, args.band_width))
    else:
        files = sorted(pred_dir.glob("*.png"))
        if not files:
            raise CliError(f"no label masks in {pred_dir}")
        preds = [(f.stem, load_label_png(f), load_label_png(gt_dir / f.name))
                 for f in files]
        n = 1 + max(max(int(p.max()), int(g.max())) for _, p, g in preds)
        acc = ConfusionAccumulator(n)
        for stem, p, g in preds:
            acc.update(p, g)
            report.add_row(id=stem)
        report.per_class_iou = acc.per_class()
        report.mean_class_iou = acc.mean()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    (out_dir / "report.csv").write_text(report.to_csv())
    agg = report.aggregates()
    headline = agg.get("mean_iou", agg.get("mean_class_iou"))
    print(f"evaluated {len(report.rows)} items, headline {headline}")
    return 0


# ---------------------------------------------------------------------------
# adapt-iou
# ---------------------------------------------------------------------------

def cmd_adapt_iou(args) -> int:
    tcfg = TrainConfig(seed=_resolve_seed(args))
    if args.config:
        payload = load_config_file(args.config)
        if "train" in payload:
            tcfg = train_config_from({"seed": _resolve_seed(args),
                                      **payload["train"]})
    spec = DatasetSpec(mode="instance", image_dir=Path(args.images),
                       masks=_mask_source(args.masks, args.mask_format))
    factory = make_backend_factory(args.backend, args.mock_noise)
    samples = []
    modes = tuple(args.modes.split(",")) if args.modes else ("point", "box", "mask")
    for record in ingest(spec):
        backend = factory(record.name)
        emb = backend.embed(record.image)
        samples.extend(build_training_set(
            backend, [(emb, coarse) for _, coarse in record.targets], modes=modes))
    if not samples:
        raise CliError("no usable training samples in the dataset")
    adaptor = train(samples, tcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_adaptor(adaptor, out)
    print(f"trained adaptor on {len(samples)} samples "
          f"(train top-1 {top1_on_samples(samples, adaptor):.3f} "
          f"vs base {top1_on_samples(samples):.3f}) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# simulate-defects
# ---------------------------------------------------------------------------

def cmd_simulate_defects(args) -> int:
    spec = DefectSpec(seed=_resolve_seed(args))
    if args.config:
        payload = load_config_file(args.config)
        if "defects" in payload:
            spec = defect_spec_from({"seed": _resolve_seed(args),
                                     **payload["defects"]})
    dataset = DatasetSpec(mode="instance", image_dir=Path(args.images),
                          masks=_mask_source(args.gt, args.gt_format))
    out_dir = Path(args.out)
    rng = np.random.default_rng(spec.seed)
    index = []
    n = 0
    for record in ingest(dataset):
        for tid, gt in record.targets:
            if spec.drop_prob > 0 and rng.random() < spec.drop_prob:
                continue
            coarse = simulate_defects(gt, spec, rng)
            save_mask_png(coarse, out_dir / "masks" / f"{record.name}__{tid}.png")
            index.append({"image": record.name, "target": tid,
                          "iou_vs_gt": iou(coarse, gt),
                          "rle": rle_to_coco(coarse)})
            n += 1
    _dump_json({"schema_version": REPORT_SCHEMA_VERSION, "entries": index},
               out_dir / "index.json")
    print(f"simulated defects for {n} masks -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# backend-check
# ---------------------------------------------------------------------------

DECODER_FEED_KEYS = ("point_coords", "point_labels", "box_coords", "box_flag",
                     "mask_prompt", "mask_flag")
DECODER_OUTPUT_KEYS = ("logits", "iou_pred", "hidden")


def cmd_backend_check(args) -> int:
    kind, _, manifest_path = args.backend.partition(":")
    if kind != "neural":
        raise CliError("backend-check works on neural:<manifest> backends")
    from .neural import load_neural
    backend = load_neural(manifest_path)
    fixtures_dir = Path(args.fixtures)
    index_path = fixtures_dir / "fixtures.json"
    if not index_path.is_file():
        raise CliError(f"no fixtures.json in {fixtures_dir}")
    index = json.loads(index_path.read_text())
    tolerance = float(args.tolerance or index.get("tolerance", 1e-3))
    results = []
    ok = True
    for name in index["fixtures"]:
        bundle = np.load(fixtures_dir / name)
        entry = {"fixture": name, "tolerance": tolerance, "diffs": {}}
        emb_out = backend.run_encoder_raw(
            {"image": backend.preprocess(bundle["image"])})
        emb = next(iter(emb_out.values()))
        d = float(np.max(np.abs(emb - bundle["embedding"])))
        entry["diffs"]["embedding"] = d
        feeds = {k: bundle[k] for k in DECODER_FEED_KEYS}
        feeds["embedding"] = bundle["embedding"]
        dec = backend.run_decoder_raw(feeds)
        for key in DECODER_OUTPUT_KEYS:
            entry["diffs"][key] = float(np.max(np.abs(dec[key] - bundle[key])))
        entry["pass"] = all(v <= tolerance for v in entry["diffs"].values())
        ok &= entry["pass"]
        results.append(entry)
    payload = {"schema_version": REPORT_SCHEMA_VERSION, "pass": ok,
               "results": results}
    if args.out:
        _dump_json(payload, Path(args.out))
    for entry in results:
        worst = max(entry["diffs"].values())
        print(f"{entry['fixture']}: {'PASS' if entry['pass'] else 'FAIL'} "
              f"(max abs diff {worst:.2e})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON config file")
    common.add_argument("--backend", help="mock:<scene.json|dir> or neural:<manifest>")
    common.add_argument("--seed", type=int, default=None,
                        help="master seed (fallback: MASKFORGE_SEED, then 0)")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel image workers; output identical to --jobs 1")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--mock-noise", type=float, default=0.05,
                        help="mock backend quality-score noise amplitude")

    parser = argparse.ArgumentParser(prog="maskforge",
                                     description="coarse-mask refinement toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", parents=[common],
                       help="refine a dataset's coarse masks")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--mask-format", required=True,
                   choices=["instance_png", "label_png", "coco_json"])
    p.add_argument("--gt")
    p.add_argument("--gt-format", default="instance_png",
                   choices=["instance_png", "label_png", "coco_json"])
    p.add_argument("--mode", choices=["instance", "semantic"])
    p.add_argument("--selector",
                   choices=["predicted", "adapted", "coarse_iou", "gt_iou"])
    p.add_argument("--prompts", help="comma list from point,box,mask")
    p.add_argument("--iterations", type=int)
    p.add_argument("--adaptor", help="adaptor file for --selector adapted")
    p.add_argument("--band-width", type=int, default=None,
                   help="boundary IoU band width in px (default 2%% of diagonal)")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=["instance", "semantic"], default="instance")
    p.add_argument("--band-width", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("adapt-iou", parents=[common],
                       help="train the quality-ranking adaptor on coarse masks")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--mask-format", required=True,
                   choices=["instance_png", "coco_json"])
    p.add_argument("--modes", help="comma list of single-prompt modes")
    p.set_defaults(func=cmd_adapt_iou)

    p = sub.add_parser("simulate-defects", parents=[common],
                       help="fabricate coarse masks from ground truth")
    p.add_argument("--images", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--gt-format", default="instance_png",
                   choices=["instance_png", "coco_json"])
    p.set_defaults(func=cmd_simulate_defects)

    p = sub.add_parser("backend-check", parents=[common],
                       help="replay golden fixtures through a neural backend")
    p.add_argument("--fixtures", required=True)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_backend_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    required = {"refine": ("backend", "out"), "adapt-iou": ("backend", "out"),
                "eval": ("out",), "simulate-defects": ("out",),
                "backend-check": ("backend",)}
    try:
        for attr in required.get(args.command, ()):
            if getattr(args, attr) in (None, ""):
                raise CliError(f"--{attr} is required for {args.command}")
        return args.func(args)
    except (CliError, ConfigError, IngestError, SimulationError, OSError,
            ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        if os.environ.get("MASKFORGE_DEBUG"):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
