"""The closed perception-memory-prediction-action-update loop.

One step: preprocess the observation, encode it, refresh the occupancy
belief and compute the repulsive correction (hybrid mode), advance the
recurrent memory, score every action with the utility critic, act per
the operational mode, record the per-scale predictions made before the
next observation arrives, then replay the transition window through the
trainer. Modes differ only in the action source and in whether the
parameter update runs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import decision, memory, optimizer, perception, symbolic, world_model
from .autodiff import ContractError, Tape, Tensor
from .config import RunConfig
from .environment import (
    ACTION_LABELS,
    MICRO_DIM,
    GridWorld,
    MultiScaleObservation,
    TrueScales,
)
from .params import ParameterSet, const_vars
from .perception import Preprocessed, SCALES


class Mode(str, Enum):
    MODELING_ONLY = "modeling_only"
    INTERVENTION_ONLY = "intervention_only"
    DUAL_FLOW = "dual_flow"


@dataclass
class TransitionRecord:
    """Everything one step produced, complete before the trainer sees it."""

    x: Preprocessed
    s: np.ndarray
    h_prev: np.ndarray
    h: np.ndarray
    action: int
    reward: float
    x_next: Preprocessed
    true_next: TrueScales
    done: bool
    ds: np.ndarray
    ds_next: np.ndarray
    predicted: dict[str, world_model.ScaleBelief]


@dataclass
class StepResult:
    record: TransitionRecord
    breakdown: optimizer.LossBreakdown
    next_obs: MultiScaleObservation
    reward: float
    done: bool
    eta: float
    epsilon: float


@dataclass
class EpisodeSummary:
    total_reward: float
    steps: int
    success: bool
    mean_losses: dict[str, float] = field(default_factory=dict)


@dataclass
class DescentProbe:
    """A frozen batch of observation sequences with next-step targets.

    Evaluating the prediction loss on this set measures the parameter
    state alone, independent of where the behavior policy currently is.
    """

    sequences: np.ndarray  # (n, seq_len, input_dim)
    actions: np.ndarray  # (n,)
    true_micro: np.ndarray  # (n, micro_dim)
    true_meso: np.ndarray  # (n,)
    true_macro: np.ndarray  # (n, macro_dim)


def collect_probe(
    env: GridWorld, rng: np.random.Generator, n_items: int = 64, seq_len: int = 12
) -> DescentProbe:
    """Roll random walks on a cloned environment into a fixed probe set."""
    world = env.clone()
    world.rng = rng
    sequences = []
    actions = []
    micro = []
    meso = []
    macro = []
    for _ in range(n_items):
        obs = world.reset()
        ranges = world.scale_ranges()
        xs = []
        for k in range(seq_len):
            xs.append(perception.preprocess(obs.scales(), ranges).vector)
            if k == seq_len - 1:
                break
            action = int(rng.integers(len(ACTION_LABELS)))
            obs, _, done = world.step(action)
            if done:
                obs = world.reset()
        action = int(rng.integers(len(ACTION_LABELS)))
        world.step(action)
        true = world.true_scale_states()
        sequences.append(np.stack(xs))
        actions.append(action)
        micro.append(true.micro)
        meso.append(true.meso_bin)
        macro.append(true.macro)
    return DescentProbe(
        sequences=np.stack(sequences),
        actions=np.array(actions, dtype=np.intp),
        true_micro=np.stack(micro),
        true_meso=np.array(meso, dtype=np.intp),
        true_macro=np.stack(macro),
    )


def _spawn_rngs(seed: int) -> dict[str, np.random.Generator]:
    seq = np.random.SeedSequence(seed)
    names = ("perception", "memory", "world_model", "policy", "pcgrad", "env", "eval")
    children = seq.spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


class Agent:
    """Owns the module configs, the trainer, and the per-episode state."""

    def __init__(self, cfg: RunConfig, env: GridWorld, rngs: dict[str, np.random.Generator]):
        input_dim = 2 * MICRO_DIM + env.macro_dim
        self.cfg = cfg
        self.action_space = decision.ActionSpace(labels=ACTION_LABELS)
        self.pcfg = perception.PerceptionConfig(
            input_dim=input_dim,
            hidden_dim=cfg.encoder_hidden,
            state_dim=cfg.state_dim,
            dual_stream=cfg.stream == "dual",
        )
        self.mcfg = memory.MemoryConfig(state_dim=cfg.state_dim, memory_dim=cfg.memory_dim)
        self.wcfg = world_model.WorldModelConfig(
            memory_dim=cfg.memory_dim,
            fused_dim=cfg.state_dim + cfg.memory_dim,
            n_actions=self.action_space.n,
            hidden_dim=cfg.wm_hidden,
            micro_dim=MICRO_DIM,
            macro_dim=env.macro_dim,
            meso_bins=cfg.k_meso,
            weights=world_model.ScaleWeights.normalized(cfg.w_micro, cfg.w_meso, cfg.w_macro),
        )
        tensors: dict[str, Tensor] = {}
        tensors.update(perception.init_params(self.pcfg, rngs["perception"]))
        tensors.update(memory.init_params(self.mcfg, rngs["memory"]))
        tensors.update(world_model.init_params(self.wcfg, rngs["world_model"]))
        params = ParameterSet(tensors)
        target_mem = dict(params.group("mem."))
        self.trainer = optimizer.Trainer(
            params=params,
            target_mem=target_mem,
            wm_cfg=self.wcfg,
            hyper=optimizer.Hyper(
                gamma=cfg.gamma, beta=cfg.beta, lam=cfg.lam, window=cfg.window
            ),
            schedule=optimizer.Schedule(eta0=cfg.eta0, p=cfg.eta_decay, t0=cfg.eta_t0),
            state_dim=cfg.state_dim,
            tau_polyak=cfg.tau_polyak,
            use_pcgrad=cfg.pcgrad,
            minimal_update=cfg.minimal_update,
            dual_stream=cfg.stream == "dual",
            rng=rngs["pcgrad"],
        )
        self.sensor = symbolic.SensorModel(p_hit=cfg.p_hit, p_false=cfg.p_false)
        self.eps_schedule = decision.EpsilonSchedule(
            eps0=cfg.eps0, eps_min=cfg.eps_min, decay_steps=cfg.eps_decay_steps
        )
        self.policy_rng = rngs["policy"]
        self.belief = symbolic.OccupancyBelief.uniform(env.size)
        self.h = memory.init_state(self.mcfg)
        self.window: deque[TransitionRecord] = deque(maxlen=cfg.window)
        self.flags = world_model.PredFlags()

    @classmethod
    def from_config(cls, cfg: RunConfig, env: GridWorld, seed: int | None = None):
        rngs = _spawn_rngs(cfg.seed if seed is None else seed)
        return cls(cfg, env, rngs), rngs

    @property
    def params(self) -> ParameterSet:
        return self.trainer.params

    # ------------------------------------------------------------------- pieces

    def reset_episode_state(self) -> None:
        if not self.cfg.carry_memory:
            self.h = memory.init_state(self.mcfg)
        self.window.clear()

    def _update_belief(self, env: GridWorld, micro_reading: np.ndarray) -> None:
        """Thresholded Bayes refresh of the sensed 3x3 neighborhood."""
        r0, c0 = env.agent_position
        i = 0
        belief = self.belief
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                cell = (r0 + dr, c0 + dc)
                if 0 <= cell[0] < env.size and 0 <= cell[1] < env.size:
                    observed = bool(micro_reading[i] > 0.5)
                    belief = symbolic.bayes_update(belief, cell, observed, self.sensor)
                i += 1
        self.belief = belief

    def _fused(self, s_for_utility: np.ndarray, h: np.ndarray, ds: np.ndarray) -> np.ndarray:
        return symbolic.fuse(s_for_utility, h, ds)

    def _choose(self, mode: Mode, z: np.ndarray, t: int) -> tuple[int, float]:
        if mode is Mode.MODELING_ONLY:
            return int(self.policy_rng.integers(self.action_space.n)), 1.0
        if mode is Mode.INTERVENTION_ONLY:
            return decision.select_greedy(self.params, z, self.wcfg), 0.0
        eps = self.eps_schedule.value(t)
        return (
            decision.select_epsilon_greedy(self.params, z, self.wcfg, eps, self.policy_rng),
            eps,
        )

    def _breakdown(
        self, record: TransitionRecord, z: np.ndarray, step: int
    ) -> optimizer.LossBreakdown:
        params = self.params
        per_scale = {
            scale: world_model.pred_loss_scale(
                scale,
                record.predicted[scale],
                record.true_next.micro
                if scale == "micro"
                else record.true_next.meso_bin
                if scale == "meso"
                else record.true_next.macro,
                self.flags,
            )
            for scale in SCALES
        }
        return optimizer.LossBreakdown(
            step=step,
            l_perception=perception.perception_loss(params, record.x.vector),
            l_memory=memory.memory_loss(
                params, self.trainer.target_mem, record.s, record.h_prev
            ),
            l_pred=world_model.pred_loss_total(per_scale, self.wcfg.weights),
            utility=world_model.utility_total(params, z, record.action, self.wcfg),
            l_aux=optimizer.l2_penalty(params, self.cfg.lam),
            pred_scales=per_scale,
        )

    # --------------------------------------------------------------------- step

    def step(
        self,
        env: GridWorld,
        obs: MultiScaleObservation,
        mode: Mode,
        t: int,
        random_policy: bool = False,
    ) -> StepResult:
        x = perception.preprocess(obs.scales(), env.scale_ranges())
        params = self.params
        s = perception.encode(params, x.vector)
        if self.pcfg.dual_stream:
            _, s_for_utility = perception.encode_dual(params, x.vector)
        else:
            s_for_utility = s

        if self.cfg.hybrid:
            self._update_belief(env, obs.micro)
            ds = symbolic.correction(self.belief, env.agent_position, self.cfg.rho)
        else:
            ds = np.zeros(2)

        h_prev = self.h
        h = memory.memory_step(params, s, h_prev)
        z = self._fused(s_for_utility, h, ds)

        if random_policy:
            action, epsilon = int(self.policy_rng.integers(self.action_space.n)), 1.0
        else:
            action, epsilon = self._choose(mode, z, t)

        # predictions are fixed before the environment answers
        predicted = {
            scale: world_model.predict_scale(params, scale, h, action, self.wcfg)
            for scale in SCALES
        }

        next_obs, reward, done = env.step(action)
        true_next = env.true_scale_states()
        if self.cfg.hybrid:
            ds_next = symbolic.correction(self.belief, env.agent_position, self.cfg.rho)
        else:
            ds_next = np.zeros(2)
        x_next = perception.preprocess(next_obs.scales(), env.scale_ranges())

        record = TransitionRecord(
            x=x,
            s=s,
            h_prev=h_prev,
            h=h,
            action=action,
            reward=reward,
            x_next=x_next,
            true_next=true_next,
            done=done,
            ds=ds,
            ds_next=ds_next,
            predicted=predicted,
        )
        breakdown = self._breakdown(record, z, t)

        eta = 0.0
        if mode is not Mode.INTERVENTION_ONLY:
            self.window.append(record)
            info = self.trainer.update(list(self.window), t)
            eta = info.eta

        self.h = h
        return StepResult(
            record=record,
            breakdown=breakdown,
            next_obs=next_obs,
            reward=reward,
            done=done,
            eta=eta,
            epsilon=epsilon,
        )

    def probe_loss(self, probe: "DescentProbe", params: ParameterSet | None = None) -> float:
        """Weighted prediction loss of the given parameters on a fixed probe.

        Replays each stored observation sequence from a zero memory state,
        so the value depends on the parameters alone. This is the scalar
        the descent monitor should watch: the running training loss also
        moves with wherever the behavior policy happens to wander.
        """
        if params is None:
            params = self.params
        n, seq_len, _ = probe.sequences.shape
        tape = Tape()
        pv = const_vars(tape, params)
        h = tape.const(np.zeros((n, self.mcfg.memory_dim)))
        for k in range(seq_len):
            s = perception.encode_rows(tape, pv, tape.const(probe.sequences[:, k, :]))
            h = memory.cell_rows(tape, pv, s, h)
        onehot = world_model.action_onehot_rows(probe.actions, self.wcfg.n_actions)
        ha = tape.hstack([h, tape.const(onehot)])
        w = self.wcfg.weights
        total = 0.0
        for scale, true_rows in (("micro", probe.true_micro), ("macro", probe.true_macro)):
            mean, _ = world_model.gaussian_head_rows(tape, pv, scale, ha, self.wcfg)
            diff = true_rows - mean.val
            total += w[scale] * 0.5 * float(np.einsum("ij,ij->", diff, diff)) / n
        logits = world_model.meso_logits_rows(tape, pv, ha, self.wcfg)
        logp = tape.log_softmax(logits).val
        nll = -logp[np.arange(n), probe.true_meso]
        total += w["meso"] * float(np.minimum(nll, world_model.MESO_LOSS_CAP).mean())
        return total

    def run_episode(
        self,
        env: GridWorld,
        mode: Mode,
        max_steps: int | None = None,
        start_step: int = 0,
        random_policy: bool = False,
    ) -> tuple[EpisodeSummary, int]:
        """Reset and roll one episode; returns the summary and steps used.

        max_steps caps the episode on top of whatever cap the environment
        itself enforces; None defers to the environment alone.
        """
        if max_steps is not None and max_steps < 1:
            raise ContractError("run_episode needs max_steps >= 1")
        obs = env.reset()
        self.reset_episode_state()
        total_reward = 0.0
        sums: dict[str, float] = {"l_perception": 0.0, "l_memory": 0.0, "l_pred": 0.0}
        steps = 0
        t = start_step
        done = False
        while not done:
            result = self.step(env, obs, mode, t, random_policy=random_policy)
            total_reward += result.reward
            sums["l_perception"] += result.breakdown.l_perception
            sums["l_memory"] += result.breakdown.l_memory
            sums["l_pred"] += result.breakdown.l_pred
            steps += 1
            t += 1
            done = result.done
            obs = result.next_obs
            if max_steps is not None and steps >= max_steps:
                break
        mean_losses = {k: v / steps for k, v in sums.items()}
        return (
            EpisodeSummary(
                total_reward=total_reward,
                steps=steps,
                success=env.at_goal,
                mean_losses=mean_losses,
            ),
            steps,
        )
