"""Command line surface: train, eval, verify, lab.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import convergence, runner, verify
from .config import ConfigError, load_config
from .environment import random_mdp
from .optimizer import Schedule, validate_schedule


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aukai",
        description="Multi-scale predictive agent: training, evaluation, verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training session")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument(
        "--replicas",
        type=int,
        default=0,
        help="train N independent seeds concurrently (seed..seed+N-1)",
    )

    p_eval = sub.add_parser("eval", help="frozen-policy evaluation of a checkpoint")
    p_eval.add_argument("--ckpt", default=None)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--episodes", type=int, required=True)
    p_eval.add_argument("--random", action="store_true", help="uniform-random baseline")
    p_eval.add_argument("--seed", type=int, default=None)

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("suite", choices=sorted(verify.SUITES) + ["all"])
    p_verify.add_argument("--json", action="store_true")

    p_lab = sub.add_parser("lab", help="convergence experiments")
    lab_sub = p_lab.add_subparsers(dest="lab_command", required=True)

    p_con = lab_sub.add_parser("contraction")
    p_con.add_argument("--states", type=int, default=20)
    p_con.add_argument("--actions", type=int, default=4)
    p_con.add_argument("--gammas", default="0.5,0.9")
    p_con.add_argument("--trials", type=int, default=1000)
    p_con.add_argument("--mdps", type=int, default=100)
    p_con.add_argument("--out", default="contraction.csv")

    p_rm = lab_sub.add_parser("rm")
    p_rm.add_argument("--noise", type=float, default=0.1)
    p_rm.add_argument("--steps", type=int, default=100000)
    p_rm.add_argument("--seeds", type=int, default=10)
    p_rm.add_argument("--eta0", type=float, default=0.5)
    p_rm.add_argument("--t0", type=float, default=100.0)
    p_rm.add_argument("--out", default="rm.csv")

    p_ly = lab_sub.add_parser("lyapunov")
    p_ly.add_argument("--metrics", required=True)
    p_ly.add_argument("--window", type=int, default=100)
    p_ly.add_argument("--after", type=int, default=0)
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        cfg.validate()
    if args.replicas > 0:
        seeds = list(range(cfg.seed, cfg.seed + args.replicas))
        results = runner.run_replicas(cfg, seeds, args.out)
        for seed in seeds:
            print(json.dumps({"seed": seed, "checkpoint": str(results[seed])}))
        return 0
    report = runner.run_training(cfg, args.out)
    print(
        json.dumps(
            {
                "steps": report.steps,
                "episodes": report.episodes,
                "metrics": str(report.metrics_path),
                "checkpoint": str(report.final_checkpoint),
            }
        )
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    report = runner.run_eval(
        cfg,
        args.ckpt,
        episodes=args.episodes,
        random_policy=args.random,
        seed=args.seed,
    )
    print(
        json.dumps(
            {
                "episodes": report.episodes,
                "successes": report.successes,
                "success_rate": report.success_rate,
                "mean_reward": report.mean_reward,
                "mean_steps": report.mean_steps,
                "policy": "random" if args.random else "greedy",
            }
        )
    )
    return 0


def _cmd_verify(args) -> int:
    names = sorted(verify.SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        report = verify.run_suite(name)
        ok = ok and report.passed
        print(report.to_json() if args.json else report.table())
    return 0 if ok else 1


def _cmd_lab_contraction(args) -> int:
    gammas = [float(g) for g in args.gammas.split(",") if g]
    rng = np.random.default_rng(0)
    rows = []
    for seed in range(args.mdps):
        mdp = random_mdp(args.states, args.actions, seed=seed)
        for gamma in gammas:
            max_ratio = 0.0
            for _ in range(args.trials):
                v1 = rng.normal(size=args.states)
                v2 = rng.normal(size=args.states)
                max_ratio = max(
                    max_ratio, convergence.contraction_ratio(mdp, gamma, v1, v2)
                )
            _, iterations = convergence.value_iteration(mdp, gamma, tol=1e-10)
            rows.append((seed, gamma, max_ratio, iterations))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "gamma", "max_ratio", "iterations"])
        writer.writerows(rows)
    worst = max(r[2] - r[1] for r in rows)
    print(json.dumps({"rows": len(rows), "out": args.out, "worst_excess": worst}))
    return 0


def _cmd_lab_rm(args) -> int:
    seeds = list(range(args.seeds))
    decayed = convergence.rm_demo(
        Schedule(eta0=args.eta0, p=1.0, t0=args.t0), args.noise, seeds, steps=args.steps
    )
    constant = convergence.rm_demo(
        Schedule(eta0=args.eta0, p=0.0, t0=args.t0), args.noise, seeds, steps=args.steps
    )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["schedule", "p", "seed", "final_distance"])
        for run in decayed.runs:
            writer.writerow(["decayed", 1.0, run.seed, run.final_distance])
        for run in constant.runs:
            writer.writerow(["constant", 0.0, run.seed, run.final_distance])
    print(
        json.dumps(
            {
                "decayed_max": float(decayed.final_distances.max()),
                "constant_min": float(constant.final_distances.min()),
                "out": args.out,
            }
        )
    )
    return 0


def _cmd_lab_lyapunov(args) -> int:
    series = []
    with open(args.metrics) as fh:
        for line in fh:
            row = json.loads(line)
            if row["step"] >= args.after:
                series.append(row["l_pred"]["total"])
    report = convergence.lyapunov_monitor(series, args.window)
    print(
        json.dumps(
            {
                "window": report.window,
                "comparisons": report.comparisons,
                "violations": report.violations,
                "descending_fraction": report.descending_fraction,
            }
        )
    )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "lab":
            if args.lab_command == "contraction":
                return _cmd_lab_contraction(args)
            if args.lab_command == "rm":
                return _cmd_lab_rm(args)
            return _cmd_lab_lyapunov(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
