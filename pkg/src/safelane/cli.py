"""Command-line entry point: ``safelane {train,eval,compare,check-scene}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig, load_config
from .harness import compare_strategies, run_eval, run_training, write_eval_csv
from .safety import SafetyConfig, format_mask, mask_actions
from .sim import scene_from_text


def _load(path: Optional[str]) -> ExperimentConfig:
    return ExperimentConfig() if path is None else load_config(path)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / cfg.strategy / f"seed_{args.seed}"
    res = run_training(cfg, args.seed, out, args.episodes)
    m = res.metrics
    print(f"trained {cfg.strategy} seed {args.seed}: {len(m.rows)} episodes, {m.collision_count} collisions")
    print(f"episodes to plateau: {m.episodes_to_plateau if m.episodes_to_plateau is not None else '-'}")
    print(f"checkpoint: {res.checkpoint}")
    print(f"log: {res.log_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    metrics = run_eval(cfg, args.checkpoint, args.seed, args.episodes)
    if args.out:
        write_eval_csv(metrics, args.out)
    n = len(metrics.rows)
    print(f"episodes: {n}")
    if n:
        print(f"collisions: {metrics.collision_count}")
        print(f"mean reward before collision: {metrics.mean_reward_before_collision:.4f}")
        print("time to collision (first episodes): " + " ".join(metrics.table_view()))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfgs = [load_config(p) for p in args.configs]
    seeds = args.seeds if args.seeds else None
    compare_strategies(cfgs, args.out, seeds, args.episodes, args.eval_episodes, workers=args.workers)
    print((Path(args.out) / "summary.txt").read_text(), end="")
    return 0


def cmd_check_scene(args: argparse.Namespace) -> int:
    scene = scene_from_text(Path(args.snapshot).read_text())
    modes = ("basic", "robust") if args.mode == "both" else (args.mode,)
    for i, mode in enumerate(modes):
        if i:
            print()
        print(format_mask(mask_actions(scene, SafetyConfig(mode=mode, margin=args.margin))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="safelane", description="Train, evaluate and compare lane-change agents; inspect action masks."
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent")
    t.add_argument("--config", help="TOML experiment file (defaults if omitted)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="run directory")
    t.add_argument("--episodes", type=int, help="override the number of training episodes")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="write per-episode CSV here")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="train, evaluate and compare several strategies")
    c.add_argument("--configs", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seeds", type=int, nargs="*")
    c.add_argument("--episodes", type=int)
    c.add_argument("--eval-episodes", type=int)
    c.add_argument("--workers", type=int, default=1, help="parallel training processes")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("check-scene", help="print the action mask for a scene snapshot")
    s.add_argument("--snapshot", required=True)
    s.add_argument("--mode", choices=("basic", "robust", "both"), default="both")
    s.add_argument("--margin", type=float, default=SafetyConfig().margin)
    s.set_defaults(func=cmd_check_scene)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
