"""Batch entry points wiring the pipeline together.

Usage::

    udeer <synth|adapt|train|pseudo|eval|visualize> --config PATH [--out DIR] [--seed N]

Configs are line-based ``key = value`` files; see the README for the keys
each command accepts.  ``--out`` and ``--seed`` override ``out_dir`` and
``seed`` from the config.  ``UDEER_THREADS`` caps per-frame worker
parallelism (default 1); parallel runs keep deterministic output order.

Exit codes: 0 ok, 2 I/O failure, 3 malformed data, 4 config error,
5 ordering violation (e.g. `pseudo` or `eval` without a checkpoint).
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from udeer import evaluation as ev
from udeer.config import REQUIRED, load_config, typed_config
from udeer.errors import CheckpointError, ConfigError, DegenerateConfig, UdeerError
from udeer.kitti_io import (
    SynthConfig,
    init_dataset_dirs,
    list_frame_ids,
    load_dataset,
    parse_calibration,
    read_png_gray,
    read_png_rgb,
    read_point_cloud,
    save_frame,
    synth_scene,
    write_png_gray16,
    write_png_gray8,
    write_png_rgb,
)
from udeer.lidar_adaptation import (
    AdaptConfig,
    altitude_difference,
    densify,
    normalize_adm,
    project_points,
)
from udeer.manifest import write_manifest
from udeer.model import LossWeights, ModelParams, TrainConfig, train_supervised
from udeer.semi_supervised import SemiConfig, semi_supervised_rounds

EXIT_OK = 0
EXIT_IO = 2
EXIT_DATA = 3
EXIT_CONFIG = 4
EXIT_ORDER = 5

_ADAPT_KEYS = {
    "radius": (int, 2),
    "max_ring": (int, 8),
    "lo_pct": (float, 2.0),
    "hi_pct": (float, 98.0),
}

_SCHEMAS = {
    "synth": {
        "count": (int, REQUIRED),
        "height": (int, 96),
        "width": (int, 320),
        "obstacle_count": (int, 6),
        "noise_level": (float, 0.3),
        "seed": (int, 0),
        "out_dir": (str, REQUIRED),
    },
    "adapt": {
        "input_dir": (str, REQUIRED),
        "out_dir": (str, REQUIRED),
        **_ADAPT_KEYS,
    },
    "train": {
        "train_dir": (str, REQUIRED),
        "out_dir": (str, REQUIRED),
        "steps": (int, 200),
        "lr": (float, 0.1),
        "momentum": (float, 0.9),
        "alpha": (float, 0.4),
        "beta": (float, 0.4),
        "gamma": (float, 0.4),
        "seed": (int, 0),
        "fuse_levels": (str, "all"),
        **_ADAPT_KEYS,
    },
    "pseudo": {
        "checkpoint": (str, REQUIRED),
        "labeled_dir": (str, REQUIRED),
        "unlabeled_dir": (str, REQUIRED),
        "heldout_dir": (str, ""),
        "out_dir": (str, REQUIRED),
        "tau": (float, 0.9),
        "rounds": (int, 3),
        "steps_per_round": (int, 100),
        "labeled_mix": (float, 0.5),
        "lr": (float, 0.1),
        "momentum": (float, 0.9),
        "alpha": (float, 0.4),
        "beta": (float, 0.4),
        "gamma": (float, 0.4),
        "seed": (int, 0),
        **_ADAPT_KEYS,
    },
    "eval": {
        "eval_dir": (str, REQUIRED),
        "out_dir": (str, REQUIRED),
        "checkpoint": (str, ""),
        "pred_dir": (str, ""),
        "frame_prefix": (str, ""),
        **_ADAPT_KEYS,
    },
    "visualize": {
        "checkpoint": (str, REQUIRED),
        "data_dir": (str, REQUIRED),
        "out_dir": (str, REQUIRED),
        "threshold": (float, 0.5),
        **_ADAPT_KEYS,
    },
}


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("UDEER_THREADS", "1")))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    """Apply fn to items, optionally on a thread pool, preserving order."""
    items = list(items)
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _adapt_config(cfg: dict) -> AdaptConfig:
    return AdaptConfig(
        radius=cfg["radius"], max_ring=cfg["max_ring"], lo_pct=cfg["lo_pct"], hi_pct=cfg["hi_pct"]
    )


def _require_checkpoint(path_str: str) -> ModelParams:
    path = Path(path_str)
    if not path_str or not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path_str or '(unset)'}")
    return ModelParams.load(path)


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    init_dataset_dirs(out)
    scene_cfg = SynthConfig(
        height=cfg["height"],
        width=cfg["width"],
        obstacle_count=cfg["obstacle_count"],
        noise_level=cfg["noise_level"],
    )
    frame_ids = []
    for k in range(cfg["count"]):
        bundle = synth_scene(cfg["seed"] + k, scene_cfg)
        save_frame(out, bundle)
        frame_ids.append(bundle.frame_id)
    write_manifest(
        out,
        "synth",
        cfg,
        seeds={"base": cfg["seed"]},
        inputs={},
        artifacts=[f"image_2/{fid}.png" for fid in frame_ids],
    )
    return EXIT_OK


def _adapt_one(input_dir: Path, out: Path, adapt: AdaptConfig, fid: str) -> None:
    try:
        cloud = read_point_cloud((input_dir / "velodyne" / f"{fid}.bin").read_bytes())
        calib = parse_calibration((input_dir / "calib" / f"{fid}.txt").read_text(encoding="utf-8"))
        h, w = read_png_rgb(input_dir / "image_2" / f"{fid}.png").shape[:2]
    except (UdeerError, OSError) as exc:
        raise UdeerError(f"frame {fid}: {exc}") from exc
    proj = project_points(cloud, calib, h, w)
    if proj.hit.any():
        adm = normalize_adm(
            densify(altitude_difference(proj, adapt.radius), adapt.max_ring),
            adapt.lo_pct,
            adapt.hi_pct,
        )
        grid, valid = adm.grid, adm.valid
    else:
        grid = np.zeros((h, w))
        valid = np.zeros((h, w), dtype=bool)
    write_png_gray16(out / "adm" / f"{fid}.png", grid)
    write_png_gray8(out / "adm_valid" / f"{fid}.png", valid)


def cmd_adapt(cfg: dict) -> int:
    input_dir = Path(cfg["input_dir"])
    out = Path(cfg["out_dir"])
    adapt = _adapt_config(cfg)
    frame_ids = list_frame_ids(input_dir)
    (out / "adm").mkdir(parents=True, exist_ok=True)
    (out / "adm_valid").mkdir(parents=True, exist_ok=True)
    _map_ordered(lambda fid: _adapt_one(input_dir, out, adapt, fid), frame_ids)
    write_manifest(
        out,
        "adapt",
        cfg,
        seeds={},
        inputs={"input_dir": input_dir},
        artifacts=[f"adm/{fid}.png" for fid in frame_ids],
    )
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    frames = load_dataset(cfg["train_dir"])
    train_cfg = TrainConfig(
        steps=cfg["steps"],
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        seed=cfg["seed"],
        loss_weights=LossWeights(cfg["alpha"], cfg["beta"], cfg["gamma"]),
        fuse_levels=cfg["fuse_levels"],
        adapt=_adapt_config(cfg),
    )
    result = train_supervised(frames, train_cfg)
    ckpt = out / "checkpoint.udcp"
    result.params.save(ckpt)
    log_path = out / "loss_log.csv"
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["step", "loss_fine", "loss_image", "loss_lidar", "loss_depth", "total"]
        )
        writer.writeheader()
        writer.writerows(result.log)
    write_manifest(
        out,
        "train",
        cfg,
        seeds={"train": cfg["seed"]},
        inputs={"train_dir": cfg["train_dir"]},
        artifacts=[ckpt.name, log_path.name],
    )
    return EXIT_OK


def cmd_pseudo(cfg: dict) -> int:
    params = _require_checkpoint(cfg["checkpoint"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    labeled = load_dataset(cfg["labeled_dir"])
    unlabeled = load_dataset(cfg["unlabeled_dir"])
    heldout = load_dataset(cfg["heldout_dir"]) if cfg["heldout_dir"] else None
    semi_cfg = SemiConfig(
        tau=cfg["tau"],
        rounds=cfg["rounds"],
        steps_per_round=cfg["steps_per_round"],
        labeled_mix=cfg["labeled_mix"],
        seed=cfg["seed"],
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        loss_weights=LossWeights(cfg["alpha"], cfg["beta"], cfg["gamma"]),
        adapt=_adapt_config(cfg),
    )
    final, reports = semi_supervised_rounds(params, labeled, unlabeled, semi_cfg, heldout)
    ckpt = out / "checkpoint_semi.udcp"
    final.save(ckpt)
    rounds_path = out / "rounds.jsonl"
    with open(rounds_path, "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(json.dumps(report.as_dict()) + "\n")
    inputs = {
        "checkpoint": cfg["checkpoint"],
        "labeled_dir": cfg["labeled_dir"],
        "unlabeled_dir": cfg["unlabeled_dir"],
    }
    if cfg["heldout_dir"]:
        inputs["heldout_dir"] = cfg["heldout_dir"]
    write_manifest(
        out,
        "pseudo",
        cfg,
        seeds={"semi": cfg["seed"]},
        inputs=inputs,
        artifacts=[ckpt.name, rounds_path.name],
    )
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    if not cfg["checkpoint"] and not cfg["pred_dir"]:
        raise ConfigError("eval needs either checkpoint= or pred_dir=")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    frames = load_dataset(cfg["eval_dir"])
    if cfg["frame_prefix"]:
        frames = [f for f in frames if f.frame_id.startswith(cfg["frame_prefix"])]
    if not frames:
        raise UdeerError(f"no frames under {cfg['eval_dir']} (prefix {cfg['frame_prefix']!r})")
    if cfg["pred_dir"]:
        pred_dir = Path(cfg["pred_dir"])

        def counts_for(frame):
            prob = read_png_gray(pred_dir / f"{frame.frame_id}.png")
            return ev.threshold_counts(prob, frame.gt)

        counts = sum(_map_ordered(counts_for, frames))
    else:
        params = _require_checkpoint(cfg["checkpoint"])
        adapt = _adapt_config(cfg)
        counts = sum(_map_ordered(lambda f: ev.pooled_counts_for_set(params, [f], adapt), frames))
    result = ev.result_from_counts(counts)
    ev.write_report_csv(out / "report.csv", counts)
    summary = ev.summary_line(result)
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    inputs = {"eval_dir": cfg["eval_dir"]}
    if cfg["pred_dir"]:
        inputs["pred_dir"] = cfg["pred_dir"]
    if cfg["checkpoint"]:
        inputs["checkpoint"] = cfg["checkpoint"]
    write_manifest(out, "eval", cfg, seeds={}, inputs=inputs, artifacts=["report.csv", "summary.txt"])
    return EXIT_OK


def cmd_visualize(cfg: dict) -> int:
    params = _require_checkpoint(cfg["checkpoint"])
    out = Path(cfg["out_dir"])
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    adapt = _adapt_config(cfg)
    frames = load_dataset(cfg["data_dir"])

    from udeer.model import forward, prepare_frame

    def render(frame):
        prep = prepare_frame(frame, adapt)
        outg = forward(params, prep.image, prep.lidar, prep.depth)
        img = ev.overlay(frame.image, outg.fine_prob, frame.gt, cfg["threshold"])
        write_png_rgb(out / "overlays" / f"{frame.frame_id}.png", img)
        return frame.frame_id

    ids = _map_ordered(render, frames)
    write_manifest(
        out,
        "visualize",
        cfg,
        seeds={},
        inputs={"data_dir": cfg["data_dir"], "checkpoint": cfg["checkpoint"]},
        artifacts=[f"overlays/{fid}.png" for fid in ids],
    )
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "adapt": cmd_adapt,
    "train": cmd_train,
    "pseudo": cmd_pseudo,
    "eval": cmd_eval,
    "visualize": cmd_visualize,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="udeer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="key = value config file")
        cmd.add_argument("--out", default=None, help="override out_dir")
        cmd.add_argument("--seed", type=int, default=None, help="override seed")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG

    try:
        cfg = typed_config(load_config(args.config), _SCHEMAS[args.command])
        if args.out is not None:
            cfg["out_dir"] = args.out
        if args.seed is not None:
            if "seed" not in _SCHEMAS[args.command]:
                raise ConfigError(f"command {args.command!r} takes no seed")
            cfg["seed"] = args.seed
        return _COMMANDS[args.command](cfg)
    except (ConfigError, DegenerateConfig) as exc:
        print(f"udeer {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"udeer {args.command}: {exc}", file=sys.stderr)
        return EXIT_ORDER
    except UdeerError as exc:
        print(f"udeer {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"udeer {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
