"""Command line entry point: ``python -m sacd <command>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import oracle
from .agent import loss_gradient_errors
from .envs import resolve_mdp
from .runner import (
    METRIC_COLUMNS,
    RunConfig,
    Trainer,
    compare_to_oracle,
    evaluate,
    read_metrics,
    run_training,
)

GRADCHECK_TOL = 1e-5


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sacd", description="Discrete soft actor-critic with an exact tabular oracle.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, one subdirectory each")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--env")
    p.add_argument("--total-env-steps", type=int)
    p.add_argument("--resume", help="run checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", help="environment name or MdpSpec file (default: the run's own)")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--mode", choices=("greedy", "sampled"), default="greedy")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("oracle-solve", help="soft value iteration on a tabular MDP")
    p.add_argument("--mdp", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", help="where to write the policy / Q file")

    p = sub.add_parser("compare", help="agent policy vs. the exact soft-optimal policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mdp", help="default: the run's own environment")
    p.add_argument("--alpha", type=float, help="default: the agent's current temperature")
    p.add_argument("--out", help="where to write the JSON report")

    p = sub.add_parser("gradcheck", help="finite-difference check of the three losses")
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("plot", help="render metrics CSV files to an SVG learning curve")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--out", required=True)
    return parser


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _train_one(config: RunConfig, out: Path, resume=None) -> list[dict]:
    _, metrics = run_training(config, out, resume_from=resume)
    return metrics


def cmd_train(args) -> int:
    config = RunConfig.load(args.config, seed=args.seed, env=args.env, total_env_steps=args.total_env_steps)
    out = Path(args.out)
    if not args.seeds:
        metrics = _train_one(config, out, args.resume)
        print(f"{len(metrics)} metric rows -> {out / 'metrics.csv'}, checkpoint -> {out / 'final.ckpt'}")
        return 0
    if args.resume:
        raise ValueError("--resume cannot be combined with --seeds")
    configs = [RunConfig.from_dict({**config.to_dict(), "seed": s}) for s in args.seeds]
    dirs = [out / f"seed_{s}" for s in args.seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_train_one, configs, dirs))
    else:
        results = [_train_one(c, d) for c, d in zip(configs, dirs)]
    out.mkdir(parents=True, exist_ok=True)
    lines = ["seed," + ",".join(METRIC_COLUMNS)]
    for seed, d in zip(args.seeds, dirs):
        body = (d / "metrics.csv").read_text().splitlines()[1:]
        lines.extend(f"{seed},{line}" for line in body)
    (out / "metrics_all.csv").write_text("\n".join(lines) + "\n")
    print(f"{len(results)} runs -> {out}")
    return 0


def _checkpoint_env(ckpt: dict, override: str | None):
    if override:
        return resolve_mdp(override)
    if ckpt.get("format") == "sacd-run":
        return Trainer.from_state_dict(ckpt).mdp
    raise ValueError("agent-only checkpoint: pass --env/--mdp")


def cmd_eval(args) -> int:
    ckpt = _load_json(args.checkpoint)
    mdp = _checkpoint_env(ckpt, args.env)
    limit = ckpt["config"]["episode_step_limit"] if ckpt.get("format") == "sacd-run" else 200
    mean, std = evaluate(ckpt, mdp, args.episodes, args.mode, np.random.default_rng(args.seed), limit)
    print(f"return mean {mean:.6f} std {std:.6f} over {args.episodes} episodes ({args.mode})")
    return 0


def cmd_oracle_solve(args) -> int:
    mdp = resolve_mdp(args.mdp)
    Q, iters = oracle.soft_value_iteration(mdp, args.alpha, tol=args.tol)
    residual = float(np.max(np.abs(oracle.soft_backup(Q, mdp, args.alpha) - Q)))
    pi = oracle.policy_improvement(Q, args.alpha)
    print(f"converged in {iters} backups, residual {residual:.3e}, objective {oracle.objective(pi, mdp, args.alpha):.10f}")
    if args.out:
        oracle.save_solution(args.out, mdp, args.alpha, Q, pi, residual, iters)
        print(f"solution -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    ckpt = _load_json(args.checkpoint)
    mdp = _checkpoint_env(ckpt, args.mdp)
    report = compare_to_oracle(ckpt, mdp, args.alpha)
    print(f"alpha {report['alpha']:.6g}  max TV {report['max_tv']:.6f}  objective gap {report['objective_gap']:.6f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = {"critic": 0.0, "policy": 0.0, "temperature": 0.0}
    for _ in range(args.batches):
        for name, err in loss_gradient_errors(rng).items():
            worst[name] = max(worst[name], err)
    for name, err in worst.items():
        print(f"{name:12s} max relative error {err:.3e}")
    return 0 if max(worst.values()) < GRADCHECK_TOL else 1


def cmd_plot(args) -> int:
    from .plotting import plot_learning_curves

    for path in args.metrics:
        read_metrics(path)  # fail early on missing or malformed files
    plot_learning_curves(args.metrics, args.out)
    print(f"plot -> {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "oracle-solve": cmd_oracle_solve,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
