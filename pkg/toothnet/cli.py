"""
Command Line Module

Operator-facing commands:
- synthesize: write a synthetic dataset with a train/val/test manifest
- preprocess: place images on the canvas and equalize them
- train: fit both stages (ablation switches --no-dr / --no-offset)
- eval: score a checkpoint or exported predictions on a dataset split
- infer: detect the 32 teeth on one image of any size
- gradcheck: compare analytic and numeric gradients
- ablate: train the four ablation variants over several seeds

Every command accepts --config, --seed, --out and --verbose, writes the
resolved config.yaml under --out, and exits with 0 (success),
1 (validation error) or 2 (runtime failure).
"""

import argparse
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import pandas as pd
from tqdm import tqdm

from toothnet.canvas import preprocess_image
from toothnet.clahe import clahe
from toothnet.config import apply_overrides, load_config, write_snapshot
from toothnet.constants import (
    ABLATION_FILE,
    ABLATION_TRENDS_FILE,
    CONFUSION_PNG,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    GRADCHECK_FILE,
    GRADCHECK_SEEDS,
    OVERLAY_DIR,
    PREDICTION_DIR,
    PREPROCESS_FILE,
)
from toothnet.errors import CheckpointError, ConfigError, DatasetError, DatasetIOError, ToothNetError
from toothnet.evaluation import evaluate, write_report
from toothnet.gradcheck import CASES, run_gradcheck
from toothnet.inference import (
    MIN_FPS_IMAGES,
    export_detections,
    infer,
    infer_source,
    load_detections,
    measure_fps,
)
from toothnet.networks import BACKBONES, Pipeline
from toothnet.render import save_confusion, save_overlay
from toothnet.scene_io import Dataset, load_image
from toothnet.synth import synthesize_dataset
from toothnet.trainer import fit, validation_mse
from Utility.image_io import save_gray
from Utility.log_manager import setup_logging

logger = logging.getLogger(__name__)

ABLATION_VARIANTS = {
    "full": (True, True),
    "no_dr": (False, True),
    "no_offset": (True, False),
    "no_dr_no_offset": (False, False),
}


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors become ConfigError (exit 1) instead of SystemExit(2)."""

    def error(self, message):
        raise ConfigError(message)


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--seed", type=int, help="seed for synthesis and training")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = ArgumentParser(prog="toothnet", description="Two-stage detection and numbering of 32 teeth")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("synthesize", parents=[common], help="write a synthetic dataset")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)

    p = commands.add_parser("preprocess", parents=[common], help="canvas placement + CLAHE")
    p.add_argument("images", nargs="+", type=Path)

    p = commands.add_parser("train", parents=[common], help="train both stages")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--no-dr", action="store_true", help="drop the distance regularization term")
    p.add_argument("--no-offset", action="store_true", help="do not train the offset head")
    p.add_argument("--backbone", choices=sorted(BACKBONES))
    p.add_argument("--iterations", type=int)

    p = commands.add_parser("eval", parents=[common], help="evaluate on a dataset split")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split", default="test")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", type=Path)
    source.add_argument("--predictions", type=Path, help="directory of exported <stem>.json predictions")

    p = commands.add_parser("infer", parents=[common], help="detect teeth on one image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)

    p = commands.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=GRADCHECK_SEEDS)
    p.add_argument("--case", action="append", choices=[c.name for c in CASES], help="restrict to a case")
    p.add_argument("--inject-fault", action="append", default=[], choices=[c.name for c in CASES],
                   help="distort the analytic gradient of a case (self-test of the checker)")

    p = commands.add_parser("ablate", parents=[common], help="train and score the ablation variants")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--iterations", type=int)
    p.add_argument("--backbone", choices=sorted(BACKBONES))
    return parser


def resolve_config(args):
    config = load_config(args.config)
    overrides = {"synth.seed": args.seed, "train.seed": args.seed}
    if getattr(args, "no_dr", False):
        overrides["train.use_dr"] = False
    if getattr(args, "no_offset", False):
        overrides["train.use_offset"] = False
    overrides["pipeline.backbone"] = getattr(args, "backbone", None)
    overrides["train.iterations"] = getattr(args, "iterations", None)
    return apply_overrides(config, overrides)


def _check_canvas(scenes, pipeline_config, source):
    for scene in scenes[:1]:
        if (scene.width, scene.height) != (pipeline_config.canvas_width, pipeline_config.canvas_height):
            raise source(
                f"scenes are {scene.width}x{scene.height} but the pipeline expects "
                f"{pipeline_config.canvas_width}x{pipeline_config.canvas_height}"
            )


def cmd_synthesize(args, config):
    if args.count < 1:
        raise ConfigError("--count must be at least 1")
    cfg = config.pipeline
    synth = replace(config.synth, width=cfg.canvas_width, height=cfg.canvas_height)
    manifest = synthesize_dataset(
        synth, args.count, args.out, workers=args.workers,
        equalize=lambda image: clahe(image, cfg.clahe_clip_limit, cfg.clahe_tiles_x, cfg.clahe_tiles_y),
    )
    logger.info("splits: %s", manifest["split"].value_counts().to_dict())
    return EXIT_OK


def cmd_preprocess(args, config):
    cfg = config.pipeline
    rows = []
    for path in tqdm(args.images, desc="preprocess", leave=False):
        canvas, record = preprocess_image(load_image(path), cfg.canvas_width, cfg.canvas_height,
                                          cfg.clahe_clip_limit, cfg.clahe_tiles_x, cfg.clahe_tiles_y)
        target = args.out / f"{path.stem}.png"
        try:
            save_gray(canvas, target)
        except Exception as e:
            raise DatasetIOError(target, e) from e
        rows.append({"image": str(path), "output": target.name, **record.to_dict()})
    pd.DataFrame(rows).to_csv(args.out / PREPROCESS_FILE, index=False)
    logger.info("preprocessed %d image(s) into %s", len(rows), args.out)
    return EXIT_OK


def train_pipeline(config, dataset, out_dir):
    scenes = dataset.scenes("train")[:1]
    if not scenes:
        raise DatasetError("empty split 'train'")
    _check_canvas(scenes, config.pipeline, DatasetError)
    pipeline = Pipeline(config.pipeline, seed=config.train.seed, use_offset=config.train.use_offset)
    result = fit(pipeline, dataset, config.train, out_dir)
    pipeline.save(out_dir, extra={"loss_weights": asdict(config.train.weights), "use_dr": config.train.use_dr})
    return pipeline, result


def cmd_train(args, config):
    dataset = Dataset(args.dataset)
    _, result = train_pipeline(config, dataset, args.out)
    if not result.validation.empty:
        final = result.validation.iloc[-1]
        logger.info("final validation: MSE1 %.2f px^2, MSE2 %.2f px^2", final["mse1"], final["mse2"])
    return EXIT_OK


def predict_scenes(pipeline, scenes, workers=1):
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        jobs = executor.map(lambda scene: infer(scene.image, pipeline), scenes)
        return list(tqdm(jobs, total=len(scenes), desc="infer", leave=False))


def scene_fps(pipeline, scenes):
    """Throughput over the split images, repeated up to the minimum timed count."""
    images = [scene.image for scene in scenes]
    repeats = -(-MIN_FPS_IMAGES // len(images))
    fps = measure_fps(pipeline, images * repeats)
    logger.info("inference speed: %.1f FPS", fps)
    return fps


def cmd_eval(args, config):
    dataset = Dataset(args.dataset)
    stems = dataset.stems(args.split)
    if not stems:
        raise DatasetError(f"empty split '{args.split}'")
    scenes = [dataset.load(stem) for stem in stems]

    fps = None
    if args.checkpoint is not None:
        pipeline = Pipeline.load(args.checkpoint)
        _check_canvas(scenes, pipeline.config, CheckpointError)
        results = predict_scenes(pipeline, scenes, config.eval.workers)
        for stem, scene, result in zip(stems, scenes, results):
            export_detections(result, args.out / PREDICTION_DIR / f"{stem}.json",
                              dataset.layout.image_path(stem), scene.width, scene.height)
        fps = scene_fps(pipeline, scenes)
    else:
        results = [load_detections(args.predictions / f"{stem}.json") for stem in stems]

    report = replace(evaluate(results, scenes, config.eval.iou_threshold), fps=fps)
    write_report(report, args.out)
    save_confusion(report.confusion_normalized, args.out / CONFUSION_PNG, report.confusion)
    if config.eval.overlays:
        for stem, scene, result in list(zip(stems, scenes, results))[:config.eval.max_overlays]:
            save_overlay(scene.image, result, args.out / OVERLAY_DIR / f"{stem}.png", scene)
    return EXIT_OK


def cmd_infer(args, config):
    image = load_image(args.image)
    pipeline = Pipeline.load(args.checkpoint)
    result, record = infer_source(image, pipeline)
    stem = args.image.stem
    export_detections(result, args.out / f"{stem}.json", args.image.resolve(),
                      record.source_width, record.source_height)
    save_overlay(image, result, args.out / OVERLAY_DIR / f"{stem}.png")
    if result.clamped_count:
        logger.warning("%d predicted box size(s) were clamped", result.clamped_count)
    logger.info("detected %d teeth in %s", len(result), args.image)
    return EXIT_OK


def cmd_gradcheck(args, config):
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    seed = args.seed if args.seed is not None else 0
    table = run_gradcheck(seed, args.seeds, cases=args.case, corrupt=tuple(args.inject_fault))
    table.to_csv(args.out / GRADCHECK_FILE, index=False)
    logger.info("gradient checks:\n%s", table.to_string(index=False))
    return EXIT_OK if bool(table["passed"].all()) else EXIT_VALIDATION


# (description, variant, column, relation, variant, column)
ABLATION_TRENDS = [
    ("offset refinement lowers the center error", "full", "mse2", "<", "full", "mse1"),
    ("offset training raises identification recall", "full", "id_recall", ">", "no_offset", "id_recall"),
    ("distance regularization lowers the refined error", "full", "mse2", "<=", "no_dr", "mse2"),
]


def ablation_trends(table):
    """Directional checks over the per-variant means of an ablation table."""
    means = table.groupby("variant").mean(numeric_only=True)
    rows = []
    for description, left_variant, left_column, relation, right_variant, right_column in ABLATION_TRENDS:
        left = float(means.loc[left_variant, left_column])
        right = float(means.loc[right_variant, right_column])
        holds = {"<": left < right, ">": left > right, "<=": left <= right}[relation]
        rows.append({"trend": description, "left": left, "relation": relation, "right": right, "holds": holds})
        if not holds:
            logger.warning("ablation trend not reproduced: %s (%.4f %s %.4f is false)",
                           description, left, relation, right)
    return pd.DataFrame(rows, columns=["trend", "left", "relation", "right", "holds"])


def cmd_ablate(args, config):
    if args.runs < 1:
        raise ConfigError("--runs must be at least 1")
    dataset = Dataset(args.dataset)
    test_scenes = dataset.scenes("test")
    if not test_scenes:
        raise DatasetError("empty split 'test'")
    rows = []
    for run in range(args.runs):
        seed = config.train.seed + run
        for name, (use_dr, use_offset) in ABLATION_VARIANTS.items():
            logger.info("ablation run %d/%d: %s (seed %d)", run + 1, args.runs, name, seed)
            variant = replace(config, train=replace(config.train, seed=seed, use_dr=use_dr, use_offset=use_offset))
            out_dir = args.out / name / f"seed{seed}"
            out_dir.mkdir(parents=True, exist_ok=True)
            pipeline, _ = train_pipeline(variant, dataset, out_dir)
            mse1, mse2 = validation_mse(pipeline, test_scenes)
            report = evaluate(predict_scenes(pipeline, test_scenes, config.eval.workers), test_scenes,
                              config.eval.iou_threshold)
            rows.append({
                "variant": name, "seed": seed, "mse1": mse1, "mse2": mse2,
                "ap": report.ap, "ap50": report.ap50, "miou": report.miou,
                "id_precision": report.identification.precision, "id_recall": report.identification.recall,
                "fps": scene_fps(pipeline, test_scenes),
            })
    table = pd.DataFrame(rows)
    table.to_csv(args.out / ABLATION_FILE, index=False)
    summary = table.drop(columns="seed").groupby("variant", sort=False).mean(numeric_only=True)
    logger.info("ablation means over %d seed(s):\n%s", args.runs, summary.to_string())
    trends = ablation_trends(table)
    trends.to_csv(args.out / ABLATION_TRENDS_FILE, index=False)
    logger.info("ablation trends:\n%s", trends.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "synthesize": cmd_synthesize,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        setup_logging()
        logger.error("%s", e)
        return e.exit_code
    setup_logging(args.verbose)
    try:
        config = resolve_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        write_snapshot(config, args.out)
        return COMMANDS[args.command](args, config)
    except ToothNetError as e:
        logger.error("%s", e)
        return e.exit_code
    except Exception:
        logger.exception("unexpected failure in '%s'", args.command)
        return EXIT_RUNTIME
