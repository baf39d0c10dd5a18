"""Command-line surface: render, sweep, report, counterfactual, prep-outpaint.

Exit codes: 0 success, 1 usage/config error, 2 synthesis stage failure,
3 detector failure, 4 empty results.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import RecordSet, cell_subgroup, rank_subgroups
from .config import RunConfig, load_run_config
from .counterfactual import default_spec, find_flip
from .errors import (
    ConfigError,
    DetectorError,
    EmptySubgroup,
    ReportError,
    SceneSweepError,
    StageError,
    ValidationError,
)
from .model import ATTRIBUTE_NAMES, AttributeVector, background_from_json
from .outpaint_prep import RelevantClassFilter, TrainConfig, emit_manifest, prepare_dataset
from .pipeline import PipelineConfig, default_adapters, render_scene, run_pipeline
from .report import ReportOptions, build_report, write_report
from .serialize import save_scene
from .stages import StageKind, resolve_backend, StageAdapter
from .corpus import make_demo_corpus, open_corpus
from .store import ResultsStore
from .sweep import SweepRunner, expand_grid

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2
EXIT_DETECTOR = 3
EXIT_EMPTY = 4


def _parse_size(text: str) -> tuple[int, int]:
    w, _, h = text.partition("x")
    return int(w), int(h)


def _parse_location(text: str) -> tuple[float, float]:
    parts = text.replace(":", ",").split(",")
    if len(parts) != 2:
        raise ConfigError(f"location must be 'x,y', got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_fraction(text: str) -> Fraction:
    return Fraction(text) if "/" in text else Fraction(str(float(text)))


def _pipeline_from_args(args) -> PipelineConfig:
    kwargs = {}
    if args.canvas:
        kwargs["canvas"] = _parse_size(args.canvas)
    if args.glyph_canvas:
        kwargs["glyph_canvas"] = _parse_size(args.glyph_canvas)
    if args.upscale_factor:
        kwargs["upscale_factor"] = args.upscale_factor
    if args.start_color:
        kwargs["start_color"] = args.start_color
    return PipelineConfig(**kwargs)


def _load_manifest(store_path: Path) -> dict:
    manifest_path = store_path.with_name(store_path.stem + ".manifest.json")
    if not manifest_path.exists():
        raise ConfigError(
            f"no manifest next to the store ({manifest_path}); run `sweep` first"
        )
    return json.loads(manifest_path.read_text())


# ---------------------------------------------------------------------------
# Commands


def cmd_render(args) -> int:
    attrs = AttributeVector(
        object_type=args.object_type,
        object_color=args.color,
        orientation_deg=args.angle,
        scale_factor=args.scale,
        location=_parse_location(args.location),
        background=background_from_json(args.background),
    )
    cfg = _pipeline_from_args(args)
    if args.start_image:
        from PIL import Image

        start = np.asarray(Image.open(args.start_image).convert("RGB"))
        scene = run_pipeline(start, attrs, default_adapters(), args.seed, cfg)
    else:
        scene = render_scene(attrs, args.seed, config=cfg)
    out = save_scene(scene, args.out)
    print(f"gt_bbox: {scene.gt_bbox}")
    print(f"scene: {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config)
    if args.store:
        cfg.store_path = Path(args.store)
    if args.workers:
        cfg.workers = args.workers
    if args.no_scenes:
        cfg.save_scenes = False
    store = ResultsStore(cfg.store_path)
    store.write_manifest(cfg.to_manifest())
    runner = SweepRunner(
        detectors=cfg.build_detectors(),
        store=store,
        match_cfg=cfg.match,
        adapters=cfg.build_adapters(),
        pipeline_cfg=cfg.pipeline,
        scene_dir=cfg.scene_dir or cfg.store_path.parent / "scenes",
        save_scenes=cfg.save_scenes,
        workers=cfg.workers,
    )
    totals = runner.run(cfg.grid)
    print(
        f"sweep complete: {totals['cells']} cells, "
        f"{totals['evaluated']} evaluated, {totals['reused']} reused, "
        f"{totals['skipped']} skipped -> {store.path}"
    )
    return EXIT_OK


def _report_options(args, manifest: dict) -> ReportOptions:
    opts = ReportOptions.from_json(manifest.get("report", {}))
    kwargs = {
        "top_k": args.top_k if args.top_k else opts.top_k,
        "tau_high": _parse_fraction(args.tau_high) if args.tau_high else opts.tau_high,
        "tau_low": _parse_fraction(args.tau_low) if args.tau_low else opts.tau_low,
        "universe": args.universe if args.universe else opts.universe,
    }
    return ReportOptions(**kwargs)


def cmd_report(args) -> int:
    store_path = Path(args.store)
    if not store_path.exists():
        raise ReportError(f"results store not found: {store_path}")
    manifest = _load_manifest(store_path)
    cfg = RunConfig.from_manifest(manifest, store_path)
    store = ResultsStore(store_path)
    options = _report_options(args, manifest)
    report = build_report(store.records(), cfg.grid, list(cfg.grid.detectors), options)
    paths = write_report(report, args.out_dir, figures=not args.no_figures)
    for det, avg in report["averages"].items():
        print(f"average error rate [{det}]: {avg.get('percent', avg.get('error'))}")
    print(f"report: {paths['markdown']}")
    return EXIT_OK


def _parse_fix(pairs: list[str], grid_cells: list[AttributeVector]) -> AttributeVector:
    fixed = {}
    for pair in pairs:
        name, _, raw = pair.partition("=")
        if name not in ATTRIBUTE_NAMES:
            raise ConfigError(f"--fix {name!r}: not one of {ATTRIBUTE_NAMES}")
        if name in ("orientation_deg", "scale_factor"):
            fixed[name] = float(raw)
        elif name == "location":
            fixed[name] = _parse_location(raw)
        elif name == "background":
            fixed[name] = background_from_json(raw)
        else:
            fixed[name] = raw
    matches = [
        cell
        for cell in grid_cells
        if all(cell.value_of(k) == v for k, v in fixed.items())
    ]
    if not matches:
        raise ConfigError("cell selector matches no grid cell")
    return matches[0]


def cmd_counterfactual(args) -> int:
    store_path = Path(args.store)
    if not store_path.exists():
        raise ReportError(f"results store not found: {store_path}")
    manifest = _load_manifest(store_path)
    cfg = RunConfig.from_manifest(manifest, store_path)
    if args.detector not in cfg.grid.detectors:
        raise ConfigError(f"detector {args.detector!r} not in the sweep grid")
    store = ResultsStore(store_path)
    records = RecordSet(store.records())
    cells = expand_grid(cfg.grid)
    if args.fix:
        source = _parse_fix(args.fix, cells)
        subgroup = cell_subgroup(source, cfg.grid.seeds)
    else:
        candidates = [cell_subgroup(c, cfg.grid.seeds) for c in cells]
        ranked = rank_subgroups(records, candidates, 1, args.detector)
        if not ranked:
            raise EmptySubgroup("no evaluated cells for this detector")
        subgroup = ranked[0].subgroup
    runner = SweepRunner(
        detectors=cfg.build_detectors(),
        store=store,
        match_cfg=cfg.match,
        adapters=cfg.build_adapters(),
        pipeline_cfg=cfg.pipeline,
        scene_dir=cfg.scene_dir,
        save_scenes=False,
    )
    options = ReportOptions.from_json(manifest.get("report", {}))
    result = find_flip(
        subgroup,
        args.detector,
        default_spec(),
        _parse_fraction(args.flip_threshold),
        args.budget,
        records=records,
        evaluate=runner.evaluate_vector,
        tau_high=options.tau_high,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_json(), indent=2, sort_keys=True))
    if result.flip:
        print(
            f"flip found after {result.evaluated} evaluations: "
            f"{json.dumps(result.flip.perturbation, sort_keys=True)} "
            f"({result.before_n_errors}/{result.before_n_samples} -> "
            f"{result.flip.n_errors}/{result.flip.n_samples})"
        )
    else:
        print(f"none found ({result.evaluated} neighbors evaluated)")
    print(f"flip report: {out}")
    return EXIT_OK


def cmd_prep_outpaint(args) -> int:
    corpus_dir = Path(args.corpus)
    if args.make_demo:
        make_demo_corpus(corpus_dir, n_images=args.make_demo, seed=args.seed)
    reader = open_corpus(corpus_dir, args.format, corpus_id=args.corpus_id)
    if args.classes in ("coco", "bdd"):
        class_filter = RelevantClassFilter.for_corpus(args.classes)
    else:
        class_filter = RelevantClassFilter(tuple(args.classes.split(",")))
    captioner = resolve_backend(StageAdapter.of(StageKind.CAPTION, args.captioner))
    samples, skipped = prepare_dataset(reader, class_filter, captioner, args.seed)
    for image_id, reason in skipped:
        print(f"skipped {image_id}: {reason}", file=sys.stderr)
    if not samples:
        raise ConfigError("no usable samples in the corpus")
    manifest = emit_manifest(samples, args.out, TrainConfig())
    print(f"{len(samples)} samples, {len(skipped)} skipped")
    print(f"manifest: {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenesweep",
        description="Controllable scene synthesis and systematic-error discovery "
        "for object detectors.",
    )
    parser.add_argument("--version", action="version", version=f"scenesweep {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="synthesize one scene and write PNG + sidecar")
    p.add_argument("--object-type", default="sports car")
    p.add_argument("--color", default="original", help="object color or 'original'")
    p.add_argument("--angle", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--location", default="0.5,0.5")
    p.add_argument("--background", default="plain:grey", help="plain:<color> or outpaint:<prompt>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="scene.png")
    p.add_argument("--start-image", help="RGB PNG to start from (default: glyph renderer)")
    p.add_argument("--canvas", help="scene canvas WxH, e.g. 480x480")
    p.add_argument("--glyph-canvas", help="start image WxH")
    p.add_argument("--upscale-factor", type=int)
    p.add_argument("--start-color")
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser("sweep", help="run a grid sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--store", help="override the store path from the config")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-scenes", action="store_true", help="do not persist scene PNGs")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("report", help="aggregate a store into md/json/csv + figures")
    p.add_argument("--store", required=True)
    p.add_argument("--out-dir", default="report")
    p.add_argument("--top-k", type=int)
    p.add_argument("--tau-high", help="e.g. 0.9 or 9/10")
    p.add_argument("--tau-low")
    p.add_argument("--universe", choices=["cells", "cells+margin1", "cells+margin2"])
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("counterfactual", help="search minimal attribute flips")
    p.add_argument("--store", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument(
        "--fix",
        action="append",
        help="cell selector, repeatable: attr=value (default: top failing cell)",
    )
    p.add_argument("--flip-threshold", default="3/16")
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--out", default="flip.json")
    p.set_defaults(handler=cmd_counterfactual)

    p = sub.add_parser("prep-outpaint", help="build the outpainting fine-tune dataset")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["coco", "instmap"], default="instmap")
    p.add_argument("--corpus-id")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", default="coco", help="'coco', 'bdd' or a comma list")
    p.add_argument("--captioner", default="reference")
    p.add_argument("--make-demo", type=int, metavar="N", help="generate an N-image demo corpus first")
    p.set_defaults(handler=cmd_prep_outpaint)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.handler(args)
    except (ReportError, EmptySubgroup) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except DetectorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DETECTOR
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SceneSweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
