"""Command line entry point: ``semflow {synth,run,stage,eval,train,viz}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import io
from .cascade import STEPS, CascadeConfig, initial_estimate, run_cascade, run_stage
from .metrics import MetricsReport, evaluate, evaluate_scene

logger = logging.getLogger("semflow")

THREADS_ENV = "SEMFLOW_THREADS"


class CliError(Exception):
    pass


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be at least 1")
    return n


def _load_config(scene_dir: Path, params_file, stages) -> CascadeConfig:
    if params_file:
        config = io.read_params(params_file)
    elif (scene_dir / "params.txt").is_file():
        config = io.read_params(scene_dir / "params.txt")
    else:
        config = CascadeConfig()
    if stages is not None:
        config.stages = stages
    if config.stages < 0:
        raise CliError("--stages must be non-negative")
    return config


def _has_gt(scene_dir: Path) -> bool:
    return (scene_dir / "gt").is_dir()


def _output_dir(out: Path, scene: Path, many: bool) -> Path:
    return out / scene.name if many else out


def _run_one(job):
    scene, out, params, stages = job
    inputs = io.read_scene(scene)
    config = _load_config(scene, params, stages)
    t0 = time.perf_counter()
    est = run_cascade(inputs, config)
    runtime = time.perf_counter() - t0
    io.write_estimate(out, est)
    report = evaluate_scene(est, io.read_ground_truth(scene), runtime) if _has_gt(scene) else None
    return str(scene), report


def _map(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def _emit_reports(reports, report_file):
    chunks = []
    for name, rep in reports:
        if rep is None:
            continue
        chunks.append((f"# {name}\n" if len(reports) > 1 else "") + rep.to_text())
    text = "".join(chunks)
    if report_file:
        Path(report_file).write_text(text)
    elif text:
        sys.stdout.write(text)


# ------------------------------------------------------------------ commands


def cmd_synth(args):
    from .synth import NoiseRecipe, generate_scene

    out = Path(args.out)
    for k in range(args.count):
        seed = args.seed + k
        recipe = NoiseRecipe.clean(seed) if args.clean else NoiseRecipe(seed=seed)
        scene = generate_scene(recipe, seed=seed)
        target = out / f"scene_{seed:04d}" if args.count > 1 else out
        config = io.read_params(args.params) if args.params else CascadeConfig()
        if args.stages is not None:
            config.stages = args.stages
        io.save_synthetic(target, scene, config)
        logger.info("wrote %s", target)


def cmd_run(args):
    scenes = [Path(s) for s in args.scenes]
    many = len(scenes) > 1
    for s in scenes:
        if not s.is_dir():
            raise CliError(f"not a scene directory: {s}")
    jobs = [(s, _output_dir(Path(args.out), s, many), args.params, args.stages) for s in scenes]
    _emit_reports(_map(_run_one, jobs, args.threads), args.report)


def cmd_stage(args):
    scene = Path(args.scene)
    inputs = io.read_scene(scene)
    config = _load_config(scene, args.params, None)
    steps = tuple(args.step) if args.step else None
    state = initial_estimate(inputs)
    if args.state:
        prev = io.read_estimate(args.state)
        state.masks1, state.disparity1, state.flow = prev["masks1"], prev["disparity1"], prev["flow"]
        state.masks2, state.disparity2 = io.read_mask(Path(args.state) / "masks_1.png"), prev["disparity2"]
        state.disparity2_ref = prev["disparity2_ref"]
        motions = Path(args.state) / "motions.txt"
        if motions.is_file():
            state.motions = io.read_motions(motions)
    t0 = time.perf_counter()
    est = run_stage(state, inputs, args.stage, config, steps=steps)
    runtime = time.perf_counter() - t0
    io.write_estimate(args.out, est)
    for stage, step, key, energy, init in est.audit:
        logger.info("stage %d %s %s energy %.6g (init %.6g)", stage, step, key, energy, init)
    if _has_gt(scene):
        _emit_reports([(str(scene), evaluate_scene(est, io.read_ground_truth(scene), runtime))], args.report)


def cmd_eval(args):
    est = io.read_estimate(args.estimate)
    gt = io.read_ground_truth(args.gt)
    rep = evaluate(est["disparity1"], est["disparity2_ref"], est["flow"], gt.disparity1, gt.disparity2,
                   gt.flow, gt.masks1 > 0, gt.valid, masks=est["masks1"], gt_masks=gt.masks1)
    _emit_reports([(args.estimate, rep)], args.report)


def cmd_train(args):
    from .cascade import train_cascade
    from .learning import LearnConfig

    root = Path(args.directory)
    scenes = sorted(p for p in root.iterdir() if p.is_dir() and _has_gt(p)) if root.is_dir() else []
    if not scenes:
        raise CliError(f"no scene directories with ground truth under {root}")
    inputs = [io.read_scene(s) for s in scenes]
    gts = [io.read_ground_truth(s) for s in scenes]
    config = io.read_params(args.params) if args.params else CascadeConfig()
    if args.stages is not None:
        config.stages = args.stages
    if config.stages < 1:
        raise CliError("training needs at least one stage")
    params = train_cascade(inputs, [(g.masks1, g.masks2) for g in gts], config,
                           LearnConfig(epochs=args.epochs, seed=args.seed))
    config.params = params if len(params) > 1 else params[0]
    io.write_params(args.out, config)
    logger.info("wrote %s", args.out)


def cmd_viz(args):
    from .viz import disparity_to_color, error_maps, flow_to_color

    est = io.read_estimate(args.estimate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io._write_png(out / "flow_color.png", flow_to_color(est["flow"]), rgb=True)
    io._write_png(out / "disp_0_color.png", disparity_to_color(est["disparity1"]), rgb=True)
    io._write_png(out / "disp_1_color.png", disparity_to_color(est["disparity2_ref"]), rgb=True)
    if args.gt:
        for name, img in error_maps(est, io.read_ground_truth(args.gt)).items():
            io._write_png(out / f"error_{name}.png", img, rgb=True)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--stages", type=int, default=None, help="number of cascade stages")
    common.add_argument("--params", metavar="FILE", help="parameter file (INI)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default: ${THREADS_ENV} or 1)")
    common.add_argument("--report", metavar="FILE", help="write the metrics report here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="semflow", description="Instance-level scene flow refinement.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic scene directory")
    s.add_argument("out")
    s.add_argument("--count", type=int, default=1, help="number of scenes (seeds seed .. seed+count-1)")
    s.add_argument("--clean", action="store_true", help="noise-free initialisations")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", parents=[common], help="run the cascade on scene directories")
    s.add_argument("scenes", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("stage", parents=[common], help="run one cascade stage for debugging")
    s.add_argument("scene")
    s.add_argument("--out", required=True)
    s.add_argument("--stage", type=int, default=1, help="stage index (1-based)")
    s.add_argument("--step", action="append", choices=STEPS, help="restrict to these steps (repeatable)")
    s.add_argument("--state", help="output directory of a previous run to start from")
    s.set_defaults(func=cmd_stage)

    s = sub.add_parser("eval", parents=[common], help="score an output directory")
    s.add_argument("estimate")
    s.add_argument("gt", help="scene directory with gt/ or a gt directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("train", parents=[common], help="learn segmentation weights")
    s.add_argument("directory", help="directory of scene directories with ground truth")
    s.add_argument("--out", required=True, help="parameter file to write")
    s.add_argument("--epochs", type=int, default=20)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("viz", parents=[common], help="write colour-coded flow, disparity and error images")
    s.add_argument("estimate")
    s.add_argument("--out", required=True)
    s.add_argument("--gt", help="scene or gt directory for error images")
    s.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is None:
            args.threads = default_threads()
        if args.threads < 1:
            raise CliError("--threads must be at least 1")
        if args.stages is not None and args.stages < 0:
            raise CliError("--stages must be non-negative")
        args.func(args)
    except (CliError, io.SceneFormatError, ValueError, OSError) as exc:
        print(f"semflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
