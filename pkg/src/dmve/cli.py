"""Command-line entry point: train, eval, sweep, plot.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .agent import Agent
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .envs import ENVIRONMENTS, make_env
from .plotting import PlotError, plot_metrics
from .sweep import load_sweep_spec, run_sweep
from .training import evaluate_agent, run_training

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("dmve")


def cmd_train(args) -> int:
    config = load_config(args.config)
    art = run_training(config, args.out)
    print(f"trained {art.train_steps} steps over {art.env_steps} env steps; final return {art.final_return:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.env not in ENVIRONMENTS:
        raise ConfigError(f"env: unknown environment {args.env!r}; choose from {sorted(ENVIRONMENTS)}", "env")
    if args.episodes < 1:
        raise ConfigError("episodes: must be positive", "episodes")
    if not Path(args.ckpt).is_file():
        raise ConfigError(f"checkpoint not found: {args.ckpt}")
    agent = Agent.load(args.ckpt, args.env)
    returns = evaluate_agent(agent, make_env(args.env, args.episode_length), args.episodes, args.seed)
    mean, std = float(np.mean(returns)), float(np.std(returns))
    print(f"{mean:.6f} ± {std:.6f}")
    if args.csv:
        path = Path(args.csv)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["checkpoint", "env", "episodes", "seed", "return_mean", "return_std"])
            writer.writerow([args.ckpt, args.env, args.episodes, args.seed, repr(mean), repr(std)])
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep_spec(args.spec)
    results = run_sweep(spec, args.out, parallel=args.parallel)
    failed = [r for r in results if r.status != "ok"]
    for r in results:
        print(f"{r.axis}={r.value} seed={r.seed} return={r.final_return:.3f} {r.status}")
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_plot(args) -> int:
    curves = plot_metrics(args.inputs, args.out, metric=args.metric, group_by=args.group_by)
    print(f"wrote {args.out} with {len(curves)} curve(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmve", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint without exploration noise")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episode-length", type=int, default=200)
    p.add_argument("--csv", help="append the result to this CSV file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run an H or K sweep over seeds")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render metrics CSVs to an SVG")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--group-by", default=None)
    p.add_argument("--metric", default="eval_return_mean")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PlotError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
