"""Command-line entry point: ``stgeom <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every failure
prints exactly one line ``stgeom: error: <kind>: <reason>`` to stderr.
"""
import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .grid_masks import (
    CameraSetting,
    GridLayout,
    build_spatial_mask,
    build_temporal_mask,
    format_mask,
)
from .pipeline import evaluate as E
from .pipeline.config import ConfigError, RunConfig, load_config, write_resolved
from .pipeline.model import ModelConfig, ModelParams, init_params
from .pipeline.training import (
    STAGE1_ORDER,
    TrainLog,
    train_single_stage,
    train_stage1,
    train_stage2,
)
from .scenes.generator import generate_scene
from .scenes.io import read_dataset, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
TASK_ALIASES = {"pose": "cam", "depth": "depth", "mask": "mask", "point": "point",
                "track": "track"}
CKPT_META_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind, message):
    text = " ".join(str(message).split())
    print(f"stgeom: error: {kind}: {text}", file=sys.stderr)


def worker_count():
    raw = os.environ.get("Q4DG_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"Q4DG_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise UsageError(f"Q4DG_THREADS must be a positive integer, got {raw!r}")
    return n


# ------------------------------------------------------------------ helpers


def scene_dirs(data):
    """A dataset directory, or a directory of them (sorted by name)."""
    root = Path(data)
    if (root / "meta.json").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / "meta.json").exists()) if root.is_dir() else []
    if not dirs:
        raise FileNotFoundError(f"no scenes found under {data}")
    return dirs


def _ckpt_meta_path(ckpt):
    return Path(str(ckpt) + ".json")


def save_checkpoint(params, model_cfg, ckpt):
    Path(ckpt).parent.mkdir(parents=True, exist_ok=True)
    params.save(ckpt)
    _ckpt_meta_path(ckpt).write_text(json.dumps(
        {"format_version": CKPT_META_VERSION, "model": model_cfg.to_dict()},
        indent=2, sort_keys=True) + "\n")


def load_checkpoint(ckpt):
    params, _ = ModelParams.load(ckpt)
    meta_path = _ckpt_meta_path(ckpt)
    if not meta_path.exists():
        raise FileNotFoundError(f"checkpoint metadata {meta_path} missing")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != CKPT_META_VERSION:
        raise ValueError(f"unsupported checkpoint metadata version {meta.get('format_version')!r}")
    return params, ModelConfig.from_dict(meta["model"])


def _model_overrides(args):
    out = {}
    if getattr(args, "no_cvgf", False):
        out["use_cvgf"] = False
    if getattr(args, "no_ctlf", False):
        out["use_ctlf"] = False
    if getattr(args, "no_spatial_mask", False):
        out["spatial_mask"] = False
    if getattr(args, "no_temporal_mask", False):
        out["temporal_mask"] = False
    return out


# -------------------------------------------------------------- subcommands


def cmd_gen_data(args):
    overrides = {"scene": {}}
    if args.setting is not None:
        overrides["scene"]["setting"] = args.setting
    if args.views is not None:
        overrides["scene"]["V"] = args.views
    if args.times is not None:
        overrides["scene"]["T"] = args.times
    run = load_config(args.config, overrides)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(run, out)

    def make(k):
        seq = generate_scene(run.scene, args.seed + k)
        write_dataset(seq, out / f"scene_{k:04d}")

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        list(pool.map(make, range(args.count)))
    return EXIT_OK


def cmd_train(args):
    ckpt = Path(args.ckpt)
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    if args.single_stage and args.stage != 1:
        raise UsageError("--single-stage replaces both stages; use it with --stage 1")
    if args.stage == 2 and args.task != "all":
        raise UsageError("stage 2 trains all heads jointly; use --task all")
    train_over = {"subgrid": False} if args.no_avg else {}
    if args.lr is not None:
        train_over["lr"] = args.lr
    model_over = _model_overrides(args)
    if ckpt.exists():
        params, stored = load_checkpoint(ckpt)
        base = {"model": {**stored.to_dict(), **model_over}}
    elif args.stage == 2:
        raise FileNotFoundError(f"stage 2 needs a stage-1 checkpoint, {ckpt} not found")
    else:
        params, base = None, {"model": model_over}
    file_cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    if ckpt.exists():
        file_cfg = {**file_cfg, "model": {**file_cfg.get("model", {}), **base["model"]}}
        run = load_config(None, {"model": file_cfg["model"], "train": {
            **file_cfg.get("train", {}), **train_over}, "scene": file_cfg.get("scene", {})})
    else:
        run = load_config(args.config, {"model": model_over, "train": train_over})
    if params is None:
        params = init_params(run.model, args.seed)
    write_resolved(run, ckpt.parent)
    scenes = [read_dataset(d) for d in scene_dirs(args.data)]
    rng = np.random.default_rng([args.seed, args.stage])
    log = TrainLog(args.log or ckpt.parent / "train_log.csv")
    if args.steps:
        if args.single_stage:
            train_single_stage(params, run.model, scenes, run.train, rng, log, steps=args.steps)
        elif args.stage == 1:
            tasks = STAGE1_ORDER if args.task == "all" else (TASK_ALIASES[args.task],)
            train_stage1(params, run.model, scenes, run.train, rng, log, tasks, args.steps)
        else:
            train_stage2(params, run.model, scenes, run.train, rng, log, args.steps)
    save_checkpoint(params, run.model, ckpt)
    return EXIT_OK


def _predictions(args, dirs):
    if args.pred is not None:
        root = Path(args.pred)
        if len(dirs) == 1 and (root / "prediction.json").exists():
            return [E.read_prediction(root)]
        return [E.read_prediction(root / d.name) for d in dirs]
    params, model_cfg = load_checkpoint(args.ckpt)
    return [E.check_prediction(E.predict(params.tensors, model_cfg, read_dataset(d)))
            for d in dirs]


def cmd_eval(args):
    if (args.ckpt is None) == (args.pred is None):
        raise UsageError("give exactly one of --ckpt or --pred")
    dirs = scene_dirs(args.data)
    preds = _predictions(args, dirs)
    reports = [(d.name, E.score(p, read_dataset(d), args.align_disparity))
               for d, p in zip(dirs, preds)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    E.write_metrics_csv(out, reports)
    return EXIT_OK


def cmd_infer(args):
    params, model_cfg = load_checkpoint(args.ckpt)
    out = Path(args.out)
    write_resolved(RunConfig(model=model_cfg), out)
    for d in scene_dirs(args.data):
        pred = E.check_prediction(E.predict(params.tensors, model_cfg, read_dataset(d)))
        E.write_prediction(pred, out / d.name, d.name)
    return EXIT_OK


def cmd_dump_masks(args):
    try:
        layout = GridLayout(args.views, args.times, 1, args.patches, args.setting)
        if args.kind == "spatial":
            mask = build_spatial_mask(layout)
        else:
            mask = build_temporal_mask(layout, args.window)
    except ValueError as exc:
        raise UsageError(str(exc))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_mask(mask, args.window, CameraSetting.parse(args.setting)))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser():
    p = _Parser(prog="stgeom", description="Spatiotemporal geometry model: data, "
                "training, evaluation, inference and mask inspection.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="render synthetic scenes to dataset directories")
    g.add_argument("--config", help="JSON run config (its scene section is used)")
    g.add_argument("--out", required=True, help="output directory; scenes go to scene_NNNN/")
    g.add_argument("--seed", type=int, required=True, help="base seed; scene k uses seed+k")
    g.add_argument("--count", type=int, default=1, help="number of scenes (default 1)")
    g.add_argument("--setting", choices=[s.value for s in CameraSetting],
                   help="camera setting override")
    g.add_argument("--views", type=int, help="view count override")
    g.add_argument("--times", type=int, help="time-step count override")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run a training stage and write a checkpoint")
    t.add_argument("--data", required=True, help="dataset directory or directory of scenes")
    t.add_argument("--stage", type=int, choices=[1, 2], required=True,
                   help="1: per-task training, 2: joint head fine-tuning")
    t.add_argument("--task", choices=[*TASK_ALIASES, "all"], default="all",
                   help="stage-1 task, or all tasks in order (default all)")
    t.add_argument("--steps", type=int, required=True,
                   help="steps per task in stage 1, total steps in stage 2")
    t.add_argument("--ckpt", required=True,
                   help="checkpoint path; loaded when present, always written back")
    t.add_argument("--seed", type=int, required=True, help="seed for init and sampling")
    t.add_argument("--config", help="JSON run config (model and train sections)")
    t.add_argument("--lr", type=float, help="learning-rate override")
    t.add_argument("--log", help="training log path (default: train_log.csv next to ckpt)")
    t.add_argument("--no-avg", action="store_true",
                   help="train on the full grid, without random subgrid sampling")
    t.add_argument("--no-cvgf", action="store_true", help="bypass cross-view global fusion")
    t.add_argument("--no-ctlf", action="store_true", help="bypass cross-time local fusion")
    t.add_argument("--no-spatial-mask", action="store_true",
                   help="replace the spatial attention mask by all-true")
    t.add_argument("--no-temporal-mask", action="store_true",
                   help="replace the temporal attention mask by all-true")
    t.add_argument("--single-stage", action="store_true",
                   help="train every group jointly in one stage")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint or prediction dump, write metrics.csv")
    e.add_argument("--ckpt", help="checkpoint to run on each scene")
    e.add_argument("--pred", help="prediction directory written by infer (instead of --ckpt)")
    e.add_argument("--data", required=True, help="dataset directory or directory of scenes")
    e.add_argument("--out", required=True, help="metrics CSV path (scene, metric, value)")
    e.add_argument("--align-disparity", action="store_true",
                   help="fit depth scale and shift in disparity space")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="write per-frame predictions and tracks.csv")
    i.add_argument("--ckpt", required=True, help="checkpoint path")
    i.add_argument("--data", required=True, help="dataset directory or directory of scenes")
    i.add_argument("--out", required=True, help="output directory, one subdirectory per scene")
    i.set_defaults(func=cmd_infer)

    m = sub.add_parser("dump-masks", help="write an attention mask as 0/1 text")
    m.add_argument("--views", type=int, required=True, help="view count V")
    m.add_argument("--times", type=int, required=True, help="time-step count T")
    m.add_argument("--patches", type=int, required=True, help="patch tokens per frame P")
    m.add_argument("--window", type=int, required=True, help="temporal window S (odd)")
    m.add_argument("--setting", choices=[s.value for s in CameraSetting], required=True,
                   help="camera setting")
    m.add_argument("--kind", choices=["spatial", "temporal"], required=True, help="mask kind")
    m.add_argument("--out", required=True, help="output text file")
    m.set_defaults(func=cmd_dump_masks)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _fail("usage", exc)
        return EXIT_USAGE
    except ConfigError as exc:
        _fail("config", exc)
        return EXIT_USAGE
    except SystemExit as exc:          # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
        _fail(type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
