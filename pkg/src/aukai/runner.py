"""Training and evaluation drivers around the agent loop.

A training run owns one environment and one agent, streams a metrics
line per step to ``metrics.jsonl``, echoes the canonical config next to
it, and drops periodic plus final checkpoints. Replicas fan the same
config across seeds in separate processes.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .agent import Agent, Mode, collect_probe
from .config import RunConfig, config_hash, parse_text, to_text
from .environment import GridConfig, GridWorld, load_map


@dataclass
class TrainReport:
    out_dir: Path
    steps: int
    episodes: int
    metrics_path: Path
    final_checkpoint: Path


@dataclass
class EvalReport:
    episodes: int
    successes: int
    success_rate: float
    mean_reward: float
    mean_steps: float


def _grid_config(cfg: RunConfig) -> GridConfig:
    return GridConfig(
        sigma_obs=cfg.sigma_obs,
        step_reward=cfg.step_reward,
        collision_reward=cfg.collision_reward,
        goal_reward=cfg.goal_reward,
        max_steps=cfg.max_episode_steps,
        k_macro=cfg.k_macro,
        tau_meso=cfg.tau_meso,
        meso_bins=cfg.k_meso,
    )


def build_env(cfg: RunConfig, rng: np.random.Generator) -> GridWorld:
    return GridWorld(load_map(cfg.map), _grid_config(cfg), rng)


def _metrics_line(step: int, mode: str, result, episode: int) -> str:
    b = result.breakdown
    row = {
        "step": step,
        "mode": mode,
        "l_perception": float(b.l_perception),
        "l_memory": float(b.l_memory),
        "l_pred": {
            "micro": float(b.pred_scales["micro"]),
            "meso": float(b.pred_scales["meso"]),
            "macro": float(b.pred_scales["macro"]),
            "total": float(b.l_pred),
        },
        "utility": float(b.utility),
        "eta": float(result.eta),
        "epsilon": float(result.epsilon),
        "reward": float(result.reward),
        "episode": episode,
    }
    return json.dumps(row)


def run_training(cfg: RunConfig, out_dir: str | Path) -> TrainReport:
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(to_text(cfg))
    chash = config_hash(cfg)
    mode = Mode(cfg.mode)

    agent, rngs = Agent.from_config(cfg, env=_probe_env(cfg))
    env = build_env(cfg, rngs["env"])

    metrics_path = out / "metrics.jsonl"
    episodes = 0
    obs = env.reset()
    agent.reset_episode_state()
    with metrics_path.open("w") as fh:
        for t in range(cfg.steps):
            result = agent.step(env, obs, mode, t)
            fh.write(_metrics_line(t, cfg.mode, result, episodes) + "\n")
            if cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0:
                checkpoint.save(
                    out / f"checkpoint_{t + 1}.ckpt",
                    agent.params,
                    agent.trainer.target_mem,
                    t + 1,
                    chash,
                )
            if result.done:
                episodes += 1
                obs = env.reset()
                agent.reset_episode_state()
            else:
                obs = result.next_obs
    final = out / "checkpoint_final.ckpt"
    checkpoint.save(final, agent.params, agent.trainer.target_mem, cfg.steps, chash)
    return TrainReport(
        out_dir=out,
        steps=cfg.steps,
        episodes=episodes,
        metrics_path=metrics_path,
        final_checkpoint=final,
    )


def _probe_env(cfg: RunConfig) -> GridWorld:
    """A throwaway world used only to read dimensions during construction."""
    return build_env(cfg, np.random.default_rng(0))


def run_eval(
    cfg: RunConfig,
    checkpoint_path: str | Path | None,
    episodes: int,
    random_policy: bool = False,
    seed: int | None = None,
) -> EvalReport:
    """Roll frozen greedy (or uniform random) episodes and tally success."""
    cfg.validate()
    if episodes < 0:
        raise ValueError("episodes must be non-negative")
    if episodes == 0:
        return EvalReport(
            episodes=0, successes=0, success_rate=0.0, mean_reward=0.0, mean_steps=0.0
        )
    eval_seed = cfg.seed if seed is None else seed
    agent, rngs = Agent.from_config(cfg, env=_probe_env(cfg), seed=eval_seed)
    if checkpoint_path is not None:
        snap = checkpoint.load(checkpoint_path, expected_hash=config_hash(cfg))
        live, target = checkpoint.restore_into(snap, agent.params)
        agent.trainer.params = live
        agent.trainer.target_mem = target
    env = build_env(cfg, rngs["eval"])

    successes = 0
    rewards = []
    lengths = []
    t = 0
    for _ in range(episodes):
        summary, used = agent.run_episode(
            env, Mode.INTERVENTION_ONLY, start_step=t, random_policy=random_policy
        )
        successes += int(summary.success)
        rewards.append(summary.total_reward)
        lengths.append(summary.steps)
        t += used
    return EvalReport(
        episodes=episodes,
        successes=successes,
        success_rate=successes / episodes,
        mean_reward=float(np.mean(rewards)),
        mean_steps=float(np.mean(lengths)),
    )


@dataclass
class DescentTrace:
    """Probe-loss readings taken at a fixed cadence during training.

    ``live`` scores the parameters exactly as they are at each reading;
    ``averaged`` scores a slow exponential average of them. The live
    series tells you where the model ends up relative to where it
    started. The averaged series reads out where the iterates are
    settling, stripped of the last few noisy steps, which makes its
    block means a clean monotone-descent monitor.
    """

    steps: np.ndarray
    live: np.ndarray
    averaged: np.ndarray


def run_descent_trace(
    cfg: RunConfig,
    probe_every: int = 100,
    avg_alpha: float = 0.03,
    probe_items: int = 64,
    probe_len: int = 12,
    probe_seed: int = 2024,
) -> DescentTrace:
    """Train a run while scoring a frozen probe batch on a fixed cadence.

    The probe batch is collected from a clone of the environment before
    training starts, so every reading answers the same question: how well
    do the current parameters predict this one held-out set of
    transitions. That keeps the series comparable across the whole run,
    unlike the online loss, whose level moves with wherever the behavior
    policy happens to be walking.
    """
    cfg.validate()
    if probe_every < 1:
        raise ValueError("probe_every must be positive")
    if not 0.0 < avg_alpha <= 1.0:
        raise ValueError("avg_alpha must be in (0, 1]")
    mode = Mode(cfg.mode)
    agent, rngs = Agent.from_config(cfg, env=_probe_env(cfg))
    env = build_env(cfg, rngs["env"])
    probe = collect_probe(
        env, np.random.default_rng(probe_seed), n_items=probe_items, seq_len=probe_len
    )

    avg = {k: v.data.copy() for k, v in agent.params.items()}
    obs = env.reset()
    steps = [0]
    live = [agent.probe_loss(probe)]
    averaged = [agent.probe_loss(probe, agent.params.with_updates(avg))]
    for t in range(cfg.steps):
        result = agent.step(env, obs, mode, t)
        obs = result.next_obs
        if result.done:
            agent.reset_episode_state()
            obs = env.reset()
        if (t + 1) % probe_every == 0:
            for k, v in agent.params.items():
                avg[k] += avg_alpha * (v.data - avg[k])
            steps.append(t + 1)
            live.append(agent.probe_loss(probe))
            averaged.append(agent.probe_loss(probe, agent.params.with_updates(avg)))
    return DescentTrace(
        steps=np.array(steps), live=np.array(live), averaged=np.array(averaged)
    )


def _replica_worker(cfg_text: str, seed: int, out_dir: str) -> tuple[int, str]:
    cfg = parse_text(cfg_text)
    cfg = dataclasses.replace(cfg, seed=seed)
    report = run_training(cfg, out_dir)
    return seed, str(report.final_checkpoint)


def run_replicas(
    cfg: RunConfig, seeds: list[int], out_root: str | Path, max_workers: int | None = None
) -> dict[int, Path]:
    """Train one replica per seed in parallel processes."""
    out_root = Path(out_root)
    text = to_text(cfg)
    jobs = {}
    results: dict[int, Path] = {}
    with ProcessPoolExecutor(max_workers=max_workers or len(seeds)) as pool:
        for seed in seeds:
            out_dir = out_root / f"seed_{seed}"
            jobs[pool.submit(_replica_worker, text, seed, str(out_dir))] = seed
        for fut in jobs:
            seed, ckpt = fut.result()
            results[seed] = Path(ckpt)
    return results
