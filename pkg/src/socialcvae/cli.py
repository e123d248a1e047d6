"""Command-line entry points: gen, preprocess, train, predict, eval, plot.

Exit codes: 0 success, 1 computation or output error, 2 input/validation error.
Set ``SOCIALCVAE_LOG`` (e.g. ``DEBUG``) to change log verbosity.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import formats
from .formats import ConfigError, FormatError
from .perception import DEFAULT_POOL_RADIUS, PerceptionError, compute_flow_sequence, pool_env_features
from .render import frames_for, segmentation_for
from .scene import SCENARIOS, SceneError, generate_synthetic_scenes, scenes_consistent
from .train import evaluate_predictions, predict_all, train

log = logging.getLogger("socialcvae")

EXIT_OK, EXIT_COMPUTE, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


class OutputError(Exception):
    pass


def _write(path: Path, data: str | bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data, encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror}") from None


def _require_file(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise InputError(f"{what} not found: {path}")
    return Path(path)


def _read_scenes(path) -> list:
    return formats.read_scenes(_require_file(path, "scene file"))


def cmd_gen(args) -> int:
    if args.spec not in SCENARIOS:
        raise InputError(f"unknown scenario {args.spec!r}; expected one of {', '.join(SCENARIOS)}")
    scenes = generate_synthetic_scenes(args.spec, args.count, args.seed, tau=args.tau, delta=args.delta)
    out = Path(args.out)
    files: list[tuple[Path, bytes]] = []
    if args.render_dir:
        render_dir = Path(args.render_dir)
        rel = Path(os.path.relpath(render_dir, out.parent))
        with_refs = []
        for i, s in enumerate(scenes):
            names = [f"{s.scene_id}_t{t:02d}.pgm" for t in range(s.tau)]
            for name, frame in zip(names, frames_for(s, seed=args.seed * 1_000_003 + i)):
                files.append((render_dir / name, formats.frame_to_pgm(frame)))
            seg_name = f"{s.scene_id}_seg.pgm"
            files.append((render_dir / seg_name, formats.segmentation_to_pgm(segmentation_for(s))))
            with_refs.append(dataclasses.replace(
                s, frames=tuple((rel / n).as_posix() for n in names), seg_map=(rel / seg_name).as_posix()))
        scenes = with_refs
    text = "".join(formats.dumps_scene(s) + "\n" for s in scenes)
    for path, data in files:
        _write(path, data)
    _write(out, text)
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def _scene_env(scene, base: Path, alpha: float, iterations: int, radius: float):
    frames = [formats.read_frame(_require_file(base / f, "frame")) for f in scene.frames]
    seg = formats.read_segmentation(_require_file(base / scene.seg_map, "segmentation map"))
    flows = compute_flow_sequence(frames, alpha, iterations)
    target_last = scene.target.points[scene.tau - 1]
    return flows, pool_env_features(flows, seg, target_last, radius)


def cmd_preprocess(args) -> int:
    scene_path = Path(args.scenes)
    scenes = _read_scenes(scene_path)
    base = scene_path.parent
    with_imagery = [s for s in scenes if s.frames is not None and s.seg_map is not None]
    for s in with_imagery:
        for f in list(s.frames) + [s.seg_map]:
            _require_file(base / f, f"input image for scene {s.scene_id}")
    envs, flow_files = {}, []
    for s in with_imagery:
        flows, env = _scene_env(s, base, args.alpha, args.iterations, args.radius)
        envs[s.scene_id] = env
        if args.flow_dir:
            for i, fl in enumerate(flows):
                flow_files.append((Path(args.flow_dir) / f"{s.scene_id}_{i:02d}-{i + 1:02d}.flow", formats.pack_flow(fl)))
    skipped = len(scenes) - len(with_imagery)
    if skipped:
        log.info("%d scenes have no imagery; they will use the blank environment", skipped)
    for path, data in flow_files:
        _write(path, data)
    _write(Path(args.out), "".join(formats.canonical_json({"scene_id": k, "env": v.tolist()}) + "\n"
                                   for k, v in envs.items()))
    print(f"wrote environment features for {len(envs)} scenes to {args.out}")
    return EXIT_OK


def _config_snapshot(cfg: formats.RunConfig) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in dataclasses.asdict(cfg).items() if v is not None}


def cmd_train(args) -> int:
    cfg = formats.load_config(args.config)
    scenes = _read_scenes(cfg.scenes)
    tau, delta = scenes_consistent(scenes)
    envs = formats.read_env_features(_require_file(cfg.env_features, "env feature file")) if cfg.env_features else None
    model_cfg = cfg.model_config(tau, delta)
    train_cfg = cfg.train_config()
    csv_path = cfg.loss_csv or cfg.checkpoint.with_suffix(".loss.csv")

    params, history = train(scenes, train_cfg, model_cfg, envs)
    _write(cfg.checkpoint, formats.pack_checkpoint(model_cfg, params, _config_snapshot(cfg)))
    _write(csv_path, formats.loss_csv(history))
    print(f"trained {len(scenes)} scenes for {train_cfg.epochs} epochs; final loss {history[-1]:.6g}")
    return EXIT_OK


def _load_ckpt(path):
    return formats.load_checkpoint(_require_file(path, "checkpoint"))


def _predictions_from_checkpoint(args, scenes):
    ckpt = _load_ckpt(args.checkpoint)
    envs = formats.read_env_features(_require_file(args.env_features, "env feature file")) if args.env_features else None
    scenes_consistent(scenes)
    z = np.zeros(ckpt.model.d_z) if args.mean else None
    return predict_all(scenes, ckpt.params, ckpt.model, args.k, args.seed, envs, z=z)


def cmd_predict(args) -> int:
    scenes = _read_scenes(args.scenes)
    preds = _predictions_from_checkpoint(args, scenes)
    _write(Path(args.out), "".join(
        formats.canonical_json({"scene_id": sid, "samples": [s.tolist() for s in samples]}) + "\n"
        for sid, samples in preds.items()))
    print(f"wrote {args.k} futures for each of {len(preds)} scenes to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scenes = _read_scenes(args.scenes)
    if args.predictions:
        preds = formats.read_predictions(_require_file(args.predictions, "predictions file"))
    elif args.checkpoint:
        preds = _predictions_from_checkpoint(args, scenes)
    else:
        raise InputError("eval needs --predictions or --checkpoint")
    missing = [s.scene_id for s in scenes if s.scene_id not in preds]
    if missing:
        raise InputError(f"no predictions for scene(s): {', '.join(missing[:5])}")
    metrics = evaluate_predictions(scenes, preds).to_dict()
    text = formats.metrics_text(metrics)
    if args.out_json:
        _write(Path(args.out_json), json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    if args.out_text:
        _write(Path(args.out_text), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plot import render_svg

    scenes = {s.scene_id: s for s in _read_scenes(args.scenes)}
    preds = formats.read_predictions(_require_file(args.predictions, "predictions file")) if args.predictions else {}
    sid = args.scene_id or next(iter(scenes))
    if sid not in scenes:
        raise InputError(f"scene {sid!r} not in {args.scenes}")
    if args.predictions and sid not in preds:
        raise InputError(f"scene {sid!r} has no entry in {args.predictions}")
    scene = scenes[sid]
    samples = preds.get(sid, [])
    for s in samples:
        if s.shape != (scene.delta, 2):
            raise InputError(f"prediction for {sid!r} has shape {s.shape}, expected ({scene.delta}, 2)")
    _write(Path(args.out), render_svg(scene, samples))
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="socialcvae", description="multi-agent trajectory forecasting with a CVAE")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic scenes as JSON lines")
    p.add_argument("spec", help=f"scenario: {', '.join(SCENARIOS)}")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=int, default=8)
    p.add_argument("--delta", type=int, default=12)
    p.add_argument("--out", required=True)
    p.add_argument("--render-dir", help="also render grey frames and segmentation maps into this directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("preprocess", help="frames -> optical flow -> pooled environment features")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--flow-dir", help="also write FLOWGRID files here")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--radius", type=float, default=DEFAULT_POOL_RADIUS)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    def predictor_args(p):
        p.add_argument("--checkpoint")
        p.add_argument("--k", type=int, default=20)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--env-features")
        p.add_argument("--mean", action="store_true", help="decode z = 0 instead of sampling")

    p = sub.add_parser("predict", help="sample K futures per scene")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    predictor_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="minADE / minFDE / fork coverage")
    p.add_argument("--scenes", required=True)
    p.add_argument("--predictions")
    p.add_argument("--out-json")
    p.add_argument("--out-text")
    predictor_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="SVG of one scene with its predictions")
    p.add_argument("--scenes", required=True)
    p.add_argument("--predictions")
    p.add_argument("--scene-id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SOCIALCVAE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "k", 1) < 1:
        print("error: --k must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, ConfigError, FormatError, SceneError, PerceptionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OutputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # noqa: BLE001 - report and signal a computation failure
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
