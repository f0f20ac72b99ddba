"""Objective assembly, gradient surgery, and SGD.

Per environment step the trainer replays the latest transition window
through a fresh tape and takes one SGD step on the discounted
multi-task objective. Gradients are routed by construction: the
reconstruction loss reaches only the perception encoder/decoder, the
memory-consistency loss sees a detached latent so it reaches only the
memory cell, the prediction loss reaches perception, memory and the
predictor heads, and the utility TD loss consumes a detached fused
input so it reaches only the utility heads. Conflicting task gradients
are optionally projected (PCGrad) before the step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import ContractError, Tape, Tensor
from .params import ParameterSet, const_vars, leaf_vars
from . import memory, perception, world_model
from .perception import SCALES


@dataclass(frozen=True)
class Schedule:
    """Step sizes eta_t = eta0 / (1 + t / t0)^p."""

    eta0: float
    p: float = 1.0
    t0: float = 1000.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.eta0) and self.eta0 > 0.0):
            raise ValueError("eta0 must be positive")
        if not (np.isfinite(self.t0) and self.t0 > 0.0):
            raise ValueError("t0 must be positive")

    def eta(self, t: int) -> float:
        return self.eta0 / (1.0 + t / self.t0) ** self.p


def validate_schedule(schedule: Schedule) -> tuple[bool, str]:
    """Divergent step sums with convergent squared sums need p in (0.5, 1]."""
    if schedule.p <= 0.5:
        return False, f"p={schedule.p} too small: squared step sizes must be summable"
    if schedule.p > 1.0:
        return False, f"p={schedule.p} too large: step sizes must not be summable"
    return True, "ok"


@dataclass(frozen=True)
class Hyper:
    gamma: float = 0.95
    beta: float = 0.5
    lam: float = 1e-4
    window: int = 8

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.beta < 0.0 or self.lam < 0.0:
            raise ValueError("beta and lambda must be non-negative")
        if self.window < 1:
            raise ValueError("window must be positive")


@dataclass
class LossBreakdown:
    """Per-step loss report; l_pred is the scale-weighted total."""

    step: int
    l_perception: float
    l_memory: float
    l_pred: float
    utility: float
    l_aux: float
    pred_scales: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = (self.l_perception, self.l_memory, self.l_pred, self.utility, self.l_aux)
        if not all(np.isfinite(v) for v in values):
            raise ContractError("loss breakdown must be finite")
        if min(self.l_perception, self.l_memory, self.l_pred, self.l_aux) < 0.0:
            raise ContractError("loss terms must be non-negative")


def step_loss(breakdown: LossBreakdown, beta: float) -> float:
    """l_perception + l_memory + l_pred - beta * utility + l_aux."""
    return (
        breakdown.l_perception
        + breakdown.l_memory
        + breakdown.l_pred
        - beta * breakdown.utility
        + breakdown.l_aux
    )


def discounted_objective(
    breakdowns: Sequence[LossBreakdown], gamma: float, beta: float
) -> float:
    """sum_t gamma^t * step_loss(t) over a finite window."""
    if not 0.0 <= gamma < 1.0:
        raise ContractError("gamma must lie in [0, 1)")
    return float(
        sum(gamma**t * step_loss(b, beta) for t, b in enumerate(breakdowns))
    )


def l2_penalty(params: ParameterSet, lam: float) -> float:
    """lam * sum of squared parameter entries."""
    if lam < 0.0:
        raise ContractError("lambda must be non-negative")
    return lam * params.l2()


def _arr(value) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)


def pcgrad_flat(
    flats: Sequence[np.ndarray], rng: np.random.Generator
) -> list[np.ndarray]:
    """Per-task projected gradients as flat vectors.

    For each task the other tasks are visited in a seeded random order;
    whenever the running gradient conflicts with another task's original
    gradient (negative dot), the component along that gradient is
    removed. Tasks with zero-norm gradients are skipped as projection
    targets. Non-conflicting inputs come back unchanged.
    """
    n_tasks = len(flats)
    out = []
    for i in range(n_tasks):
        g_i = flats[i].copy()
        others = [j for j in range(n_tasks) if j != i]
        if len(others) > 1:
            others = [others[k] for k in rng.permutation(len(others))]
        for j in others:
            g_j = flats[j]
            denom = float(g_j @ g_j)
            if denom == 0.0:
                continue
            dot = float(g_i @ g_j)
            if dot < 0.0:
                g_i -= (dot / denom) * g_j
        out.append(g_i)
    return out


def pcgrad(
    grad_maps: Sequence[Mapping[str, Tensor | np.ndarray]], rng: np.random.Generator
) -> dict[str, Tensor]:
    """Project conflicting task gradients, then sum them."""
    if not grad_maps:
        raise ContractError("pcgrad needs at least one gradient map")
    keys = list(grad_maps[0])
    shapes = [_arr(grad_maps[0][k]).shape for k in keys]
    sizes = [int(np.prod(s)) if s else 1 for s in shapes]
    flats = []
    for gm in grad_maps:
        if list(gm) != keys:
            raise ContractError("gradient maps must share the same parameters")
        flats.append(np.concatenate([_arr(gm[k]).ravel() for k in keys]))
    combined = np.zeros_like(flats[0])
    for g in pcgrad_flat(flats, rng):
        combined += g
    out: dict[str, Tensor] = {}
    offset = 0
    for key, shape, size in zip(keys, shapes, sizes):
        out[key] = Tensor(combined[offset : offset + size].reshape(shape))
        offset += size
    return out


def sum_gradients(
    grad_maps: Sequence[Mapping[str, Tensor | np.ndarray]]
) -> dict[str, Tensor]:
    keys = list(grad_maps[0])
    out: dict[str, Tensor] = {}
    for key in keys:
        total = _arr(grad_maps[0][key]).copy()
        for gm in grad_maps[1:]:
            total += _arr(gm[key])
        out[key] = Tensor(total)
    return out


def sgd_step(
    params: ParameterSet, grads: Mapping[str, Tensor | np.ndarray], eta: float
) -> ParameterSet:
    """theta' = theta - eta * grad for every named parameter."""
    if eta < 0.0:
        raise ContractError("eta must be non-negative")
    updates = {name: tensor.data - eta * _arr(grads[name]) for name, tensor in params.items()}
    return params.with_updates(updates)


@dataclass
class UpdateInfo:
    eta: float
    n_records: int
    n_tasks: int


class Trainer:
    """Owns the live parameters and applies windowed SGD updates."""

    def __init__(
        self,
        params: ParameterSet,
        target_mem: dict[str, Tensor],
        wm_cfg: world_model.WorldModelConfig,
        hyper: Hyper,
        schedule: Schedule,
        state_dim: int,
        tau_polyak: float = 0.01,
        use_pcgrad: bool = True,
        minimal_update: bool = False,
        dual_stream: bool = False,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.params = params
        self.target_mem = target_mem
        self.wm_cfg = wm_cfg
        self.hyper = hyper
        self.schedule = schedule
        self.state_dim = state_dim
        self.tau_polyak = tau_polyak
        self.use_pcgrad = use_pcgrad
        self.minimal_update = minimal_update
        self.dual_stream = dual_stream
        self.rng = rng if rng is not None else np.random.default_rng(0)

    # ------------------------------------------------------------------ helpers

    def _embed_rows(self, ds_rows: np.ndarray) -> np.ndarray:
        out = np.zeros((ds_rows.shape[0], self.state_dim))
        out[:, :2] = ds_rows
        return out

    def _action_state_rows(self, x_rows: np.ndarray) -> np.ndarray:
        """Latent rows feeding the utility input (action head when dual)."""
        tape = Tape()
        pv = const_vars(tape, self.params)
        head = "action" if self.dual_stream else "knowledge"
        return perception.encode_rows(tape, pv, tape.const(x_rows), head=head).val

    def _td_targets(
        self,
        x_next_rows: np.ndarray,
        h_rows: np.ndarray,
        ds_next_rows: np.ndarray,
        rewards: np.ndarray,
        dones: np.ndarray,
    ) -> np.ndarray:
        """r + gamma * max_a U(z', a) with terminal cutoffs; fully detached."""
        tape = Tape()
        pv = const_vars(tape, self.params)
        s_next = perception.encode_rows(tape, pv, tape.const(x_next_rows))
        h_next = memory.cell_rows(tape, pv, s_next, tape.const(h_rows))
        s_part = (
            self._action_state_rows(x_next_rows) if self.dual_stream else s_next.val
        )
        z_next = np.hstack([s_part + self._embed_rows(ds_next_rows), h_next.val])
        grid = world_model.utilities_rows(self.params, z_next, self.wm_cfg)
        return rewards + self.hyper.gamma * (1.0 - dones) * grid.max(axis=1)

    # ------------------------------------------------------------------- update

    def trace(self, records: Sequence) -> tuple[Tape, dict, dict]:
        """Build the traced window objective once.

        Returns the tape, the leaf variables keyed by parameter name, and
        the named loss roots (pred, memory, perception, td, aux). All four
        gradient routes live on this one tape; update() composes them.
        """
        if not records:
            raise ContractError("update needs at least one transition record")
        n = len(records)
        cfg = self.wm_cfg
        # discount weights, oldest first; normalized so the objective scale
        # (and so the effective step size) does not grow with the window
        gamma_w = self.hyper.gamma ** np.arange(n, dtype=np.float64)
        gamma_w /= gamma_w.sum()

        x_rows = np.stack([r.x.vector for r in records])
        x_next_rows = np.stack([r.x_next.vector for r in records])
        h_prev_rows = np.stack([r.h_prev for r in records])
        h_rows = np.stack([r.h for r in records])
        actions = np.array([r.action for r in records], dtype=np.intp)
        onehot = world_model.action_onehot_rows(actions, cfg.n_actions)
        rewards = np.array([r.reward for r in records], dtype=np.float64)
        dones = np.array([float(r.done) for r in records], dtype=np.float64)
        ds_rows = np.stack([r.ds for r in records])
        ds_next_rows = np.stack([r.ds_next for r in records])
        true_micro = np.stack([r.true_next.micro for r in records])
        true_macro = np.stack([r.true_next.macro for r in records])
        meso_bins = np.array([r.true_next.meso_bin for r in records], dtype=np.intp)

        y = self._td_targets(x_next_rows, h_rows, ds_next_rows, rewards, dones)

        tape = Tape()
        pv = leaf_vars(tape, self.params)
        xv = tape.const(x_rows)
        hpv = tape.const(h_prev_rows)

        # reconstruction: gradients reach the encoder/decoder only
        s = perception.encode_rows(tape, pv, xv)
        recon_err = tape.sub(xv, perception.decode_rows(tape, pv, s))
        t_perception = tape.weighted_sumsq(recon_err, gamma_w)

        # memory consistency: detached latent, target from the frozen copy
        target_vals = self._target_rows(s.val, h_prev_rows)
        h_mem = memory.cell_rows(tape, pv, tape.detach(s), hpv)
        t_memory = tape.weighted_sumsq(tape.sub(h_mem, tape.const(target_vals)), gamma_w)

        # prediction: attached latent so gradients reach all three modules
        h_t = memory.cell_rows(tape, pv, s, hpv)
        ha = tape.hstack([h_t, tape.const(onehot)])
        terms = []
        for scale, true_rows in (("micro", true_micro), ("macro", true_macro)):
            mean, _ = world_model.gaussian_head_rows(tape, pv, scale, ha, cfg)
            err = tape.sub(tape.const(true_rows), mean)
            terms.append(
                tape.scale(tape.weighted_sumsq(err, gamma_w), 0.5 * cfg.weights[scale])
            )
        logp = tape.log_softmax(world_model.meso_logits_rows(tape, pv, ha, cfg))
        nll = tape.min_scalar(tape.neg(tape.pick_rows(logp, meso_bins)), world_model.MESO_LOSS_CAP)
        terms.append(tape.scale(tape.dot(nll, tape.const(gamma_w)), cfg.weights["meso"]))
        t_pred = terms[0]
        for term in terms[1:]:
            t_pred = tape.add(t_pred, term)

        # utility TD: detached fused input, gradients reach utility heads only
        s_part = self._action_state_rows(x_rows) if self.dual_stream else s.val
        z_rows = np.hstack([s_part + self._embed_rows(ds_rows), h_t.val])
        za = tape.const(np.hstack([z_rows, onehot]))
        u = world_model.utility_total_rows(tape, pv, za, cfg)
        u_err = tape.sub(u, tape.const(y[:, None]))
        t_td = tape.scale(tape.weighted_sumsq(u_err, gamma_w), 0.5)

        aux = None
        for name in pv:
            term = tape.sum_sq(pv[name])
            aux = term if aux is None else tape.add(aux, term)

        losses = {
            "pred": t_pred,
            "memory": t_memory,
            "perception": t_perception,
            "td": t_td,
            "aux": aux,
        }
        return tape, pv, losses

    def update(self, records: Sequence, step: int) -> UpdateInfo:
        """One SGD step on the discounted window objective."""
        tape, pv, losses = self.trace(records)
        if self.minimal_update:
            roots = [losses["pred"], tape.scale(losses["td"], self.hyper.beta)]
        else:
            t_rest = tape.add(
                tape.scale(losses["td"], self.hyper.beta),
                tape.scale(losses["aux"], self.hyper.lam),
            )
            roots = [losses["pred"], losses["memory"], losses["perception"], t_rest]

        grads = [tape.backward(root) for root in roots]
        combined = pcgrad(grads, self.rng) if self.use_pcgrad else sum_gradients(grads)

        eta = self.schedule.eta(step)
        self.params = sgd_step(self.params, combined, eta)
        self.target_mem = memory.update_target(self.target_mem, self.params, self.tau_polyak)
        return UpdateInfo(eta=eta, n_records=len(records), n_tasks=len(roots))

    def _target_rows(self, s_rows: np.ndarray, h_prev_rows: np.ndarray) -> np.ndarray:
        tape = Tape()
        pv = const_vars(tape, self.target_mem)
        return memory.cell_rows(tape, pv, tape.const(s_rows), tape.const(h_prev_rows)).val
