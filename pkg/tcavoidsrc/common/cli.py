import argparse
import logging
import os
from typing import Optional

import numpy as np
from omegaconf import DictConfig

from tcavoidsrc.bench import results
from tcavoidsrc.bench.ablation import run_ablation
from tcavoidsrc.bench.profile import memory_profile, profile_latency, profile_mppi
from tcavoidsrc.bench.runners import run_dynamic_benchmark, run_memory_demo, run_mode_trace, run_tracking_sweep
from tcavoidsrc.bench.scenarios import tool_of_size
from tcavoidsrc.common.types import InteractionMode
from tcavoidsrc.common.utils import apply_overrides, build_arg_parser, load_config, setup_logging
from tcavoidsrc.netcore.engine import enable_determinism, set_precision
from tcavoidsrc.pipeline.avoidance_facade import AvoidanceFacade
from tcavoidsrc.rl.env import ReachEnv
from tcavoidsrc.rl.policy import TorchPolicy
from tcavoidsrc.rl.ppo import evaluate_policy

logger = logging.getLogger(__name__)


def _add_bench_parsers(bench: argparse.ArgumentParser) -> None:
    kinds = bench.add_subparsers(dest="bench", required=True)

    dynamic = kinds.add_parser("dynamic", help="Waypoint sweep past a static or moving obstacle")
    dynamic.add_argument("--method", nargs="+", default=["mppi"], choices=["apf", "mppi", "rl", "hybrid", "nominal"])
    dynamic.add_argument("--perception", default=None, type=str, help="gt | cluster | esdf or an observation kind")
    dynamic.add_argument("--speeds", nargs="+", default=None, type=float)
    dynamic.add_argument("--trials", default=None, type=int)
    dynamic.add_argument("--workers", default=None, type=int)
    dynamic.add_argument("--mode", default="engage", choices=[m.value for m in InteractionMode])
    dynamic.add_argument("--tool-size", default=0.0, type=float)

    sweep = kinds.add_parser("sweep", help="Tracking error over a grid of held targets")
    sweep.add_argument("--mode", default="protective", choices=[m.value for m in InteractionMode])
    sweep.add_argument("--controller", default="hybrid", choices=["hybrid", "rl_only", "nominal"])
    sweep.add_argument("--tool-sizes", nargs="+", default=None, type=float)

    memory = kinds.add_parser("memory", help="Fused occupancy memory along a scripted trajectory")
    memory.add_argument("--steps", default=None, type=int)
    memory.add_argument("--remove-at", default=None, type=int, help="Step at which the obstacle disappears")
    memory.add_argument("--every", default=10, type=int, help="Dump a grid every N steps")

    modes = kinds.add_parser("modes", help="Engage vs protective behaviour next to a static obstacle")
    modes.add_argument("--tool-size", default=0.1, type=float)

    ablation = kinds.add_parser("ablation", help="Scene representation ablation at equal training budget")
    ablation.add_argument("--variants", nargs="+", default=None)
    ablation.add_argument("--updates", default=None, type=int)
    ablation.add_argument("--episodes", default=None, type=int)


def build_cli_parser() -> argparse.ArgumentParser:
    parser = build_arg_parser()
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Pretrain the encoder or train the policy")
    train.add_argument("stage", choices=["encoder", "policy"])
    train.add_argument("--epochs", default=None, type=int)
    train.add_argument("--updates", default=None, type=int)

    evaluate = commands.add_parser("eval", help="Evaluate the trained policy on held-out seeds")
    evaluate.add_argument("--episodes", default=None, type=int)

    _add_bench_parsers(commands.add_parser("bench", help="Benchmarks"))

    profile = commands.add_parser("profile", help="Per-stage latency of the runtime loop")
    profile.add_argument("--steps", default=None, type=int)
    profile.add_argument("--mppi-samples", default=512, type=int)
    return parser


def _trained(config: DictConfig):
    facade = AvoidanceFacade(config)
    policy = TorchPolicy(facade.policy) if facade.policy is not None else None
    return facade, policy


def train(config: DictConfig, args: argparse.Namespace) -> None:
    set_precision(config.training.double_precision)
    enable_determinism(config.training.seed)
    facade = AvoidanceFacade(config)
    if args.stage == "encoder":
        facade.train_perception(args.epochs)
    else:
        facade.train_policy(args.updates)
    logger.info("Saved %s to %s", args.stage, config.save_path)


def evaluate(config: DictConfig, args: argparse.Namespace) -> None:
    facade, _ = _trained(config)
    if not facade.is_trained:
        raise SystemExit(f"No trained model under {config.save_path}")
    episodes = config.bench.eval_episodes if args.episodes is None else args.episodes
    seeds = [int(config.bench.eval_seed + i) for i in range(episodes)]
    env = ReachEnv(config, facade.make_observation())
    result = evaluate_policy(facade.policy, env, seeds, config.rl.gamma, config.rl.episode_steps)
    outcomes = [o.value if o is not None else None for o in result.outcomes]
    results.write_json(
        os.path.join(config.save_path, "eval.json"),
        {
            "success_rate": result.success_rate,
            "mean_return": result.mean_return,
            "discounted_costs": np.asarray(result.discounted_costs).tolist(),
            "outcomes": outcomes,
        },
    )
    logger.info("Success rate %.3f over %d episodes", result.success_rate, episodes)


def bench(config: DictConfig, args: argparse.Namespace) -> None:
    out = os.path.join(config.save_path, "bench", args.bench)
    if args.bench == "ablation":
        rows = run_ablation(config, args.variants, args.updates, args.episodes, save_path=out)
        results.write_ablation(out, rows)
        return
    if args.bench == "memory":
        results.write_memory_trace(out, run_memory_demo(config, args.steps, args.remove_at), args.every)
        return

    facade, policy = _trained(config)
    if args.bench == "dynamic":
        speeds = config.bench.obstacle_speeds if args.speeds is None else args.speeds
        benchmarks = []
        for method in args.method:
            perception = args.perception or _default_perception(config, method, policy is not None)
            for speed in speeds:
                benchmarks.append(
                    run_dynamic_benchmark(
                        config,
                        method,
                        perception,
                        float(speed),
                        trials=args.trials,
                        policy=policy,
                        model=facade.perception,
                        tool=tool_of_size(args.tool_size),
                        mode=InteractionMode(args.mode),
                        n_workers=args.workers,
                    )
                )
        results.write_benchmark(out, benchmarks)
    elif args.bench == "sweep":
        sweep = run_tracking_sweep(config, InteractionMode(args.mode), args.tool_sizes, args.controller, policy)
        results.write_tracking_sweep(out, sweep, config.bench.high_error_threshold)
    elif args.bench == "modes":
        perception = _default_perception(config, "hybrid", policy is not None)
        traces = run_mode_trace(config, policy, args.tool_size, model=facade.perception, perception=perception)
        results.write_mode_traces(out, traces)


def _default_perception(config: DictConfig, method: str, trained: bool) -> str:
    if method in ("rl", "hybrid") and trained:
        return config.rl.observation
    return "gt"


def profile(config: DictConfig, args: argparse.Namespace) -> None:
    facade, policy = _trained(config)
    latency = profile_latency(config, args.steps, facade.perception, policy)
    mppi = profile_mppi(config, args.mppi_samples)
    extra = {"mppi": {"n_samples": args.mppi_samples, "mean_ms": mppi.mean, "median_ms": mppi.median}}
    if facade.perception is not None:
        extra["parameter_bytes"] = memory_profile(facade.perception, facade.policy)
    results.write_latency(os.path.join(config.save_path, "profile"), latency, extra)


COMMANDS = {"train": train, "eval": evaluate, "bench": bench, "profile": profile}


def main(argv: Optional[list] = None) -> None:
    args = build_cli_parser().parse_args(argv)
    setup_logging()
    config = apply_overrides(load_config(args.config), args.seed, args.out)
    COMMANDS[args.command](config, args)


if __name__ == "__main__":
    main()
