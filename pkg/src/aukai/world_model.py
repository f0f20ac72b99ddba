"""Multi-scale next-state predictors and the utility critic.

Each scale gets its own head conditioned on the memory state and the
action: micro and macro are diagonal Gaussians (mean plus clamped log
variance), meso is a categorical over occupancy-level bins. Prediction
losses use the squared error against the true next state for Gaussian
scales and negative log likelihood of the true bin for the categorical
scale; learned variances are kept as diagnostics. A per-scale utility
head scores (z, action) pairs and is grounded as a TD critic against
environment reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .autodiff import ContractError, ShapeError, Tape, Tensor, Var
from .params import const_vars, init_bias, init_matrix
from .perception import SCALES

log = logging.getLogger(__name__)

LOGVAR_LO = -10.0
LOGVAR_HI = 4.0
PROB_FLOOR = 1e-12
MESO_LOSS_CAP = -math.log(PROB_FLOOR)

GAUSSIAN_SCALES = ("micro", "macro")


def pred_name(scale: str, part: str) -> str:
    return f"wm.pred.{scale}.{part}"


def util_name(scale: str, part: str) -> str:
    return f"wm.util.{scale}.{part}"


@dataclass(frozen=True)
class ScaleWeights:
    """Mixing weights over (micro, meso, macro); they sum to exactly 1."""

    micro: float
    meso: float
    macro: float

    @classmethod
    def normalized(cls, micro: float, meso: float, macro: float) -> "ScaleWeights":
        values = np.asarray([micro, meso, macro], dtype=np.float64)
        if np.any(values < 0.0) or not np.all(np.isfinite(values)):
            raise ValueError("scale weights must be finite and non-negative")
        total = float(values.sum())
        if total <= 0.0:
            raise ValueError("scale weights must not all be zero")
        if total != 1.0:
            log.warning("scale weights sum to %g; renormalizing", total)
            values = values / total
        # pin the last component so the left-fold sum is exactly 1.0
        macro_w = 1.0 - (float(values[0]) + float(values[1]))
        return cls(float(values[0]), float(values[1]), macro_w)

    def as_dict(self) -> dict[str, float]:
        return {"micro": self.micro, "meso": self.meso, "macro": self.macro}

    def __getitem__(self, scale: str) -> float:
        return self.as_dict()[scale]


@dataclass(frozen=True)
class WorldModelConfig:
    memory_dim: int
    fused_dim: int
    n_actions: int
    hidden_dim: int
    micro_dim: int
    macro_dim: int
    meso_bins: int
    weights: ScaleWeights

    def __post_init__(self) -> None:
        dims = (
            self.memory_dim,
            self.fused_dim,
            self.n_actions,
            self.hidden_dim,
            self.micro_dim,
            self.macro_dim,
        )
        if min(dims) < 1:
            raise ValueError("world model dims must be positive")
        if self.meso_bins < 2:
            raise ValueError("meso needs at least two bins")

    def gaussian_dim(self, scale: str) -> int:
        if scale == "micro":
            return self.micro_dim
        if scale == "macro":
            return self.macro_dim
        raise ShapeError(f"{scale!r} is not a Gaussian scale")


@dataclass
class ScaleBelief:
    """Predicted next-state belief for one scale."""

    scale: str
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if p.ndim != 1 or p.size < 2:
                raise ShapeError("categorical belief needs a probability vector")
            if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > 1e-12:
                raise ContractError("categorical probabilities must sum to 1")
            self.probs = p
        else:
            if self.mean is None or self.var is None:
                raise ContractError("gaussian belief needs mean and variance")
            self.mean = np.asarray(self.mean, dtype=np.float64)
            self.var = np.asarray(self.var, dtype=np.float64)
            if self.mean.shape != self.var.shape or self.mean.ndim != 1:
                raise ShapeError("gaussian belief shapes disagree")
            if np.any(self.var <= 0.0):
                raise ContractError("gaussian variance must be positive")

    @property
    def kind(self) -> str:
        return "categorical" if self.probs is not None else "gaussian"


@dataclass
class PredFlags:
    """Diagnostic counters raised during loss evaluation."""

    capped: int = 0


def init_params(cfg: WorldModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    pred_in = cfg.memory_dim + cfg.n_actions
    util_in = cfg.fused_dim + cfg.n_actions
    for scale in SCALES:
        if scale == "meso":
            out_dim = cfg.meso_bins
        else:
            out_dim = 2 * cfg.gaussian_dim(scale)
        p[pred_name(scale, "w1")] = init_matrix(rng, cfg.hidden_dim, pred_in)
        p[pred_name(scale, "b1")] = init_bias(cfg.hidden_dim)
        p[pred_name(scale, "w2")] = init_matrix(rng, out_dim, cfg.hidden_dim)
        p[pred_name(scale, "b2")] = init_bias(out_dim)
    for scale in SCALES:
        p[util_name(scale, "w1")] = init_matrix(rng, cfg.hidden_dim, util_in)
        p[util_name(scale, "b1")] = init_bias(cfg.hidden_dim)
        p[util_name(scale, "w2")] = init_matrix(rng, 1, cfg.hidden_dim)
        p[util_name(scale, "b2")] = init_bias(1)
    return p


def action_onehot(action: int, n_actions: int) -> np.ndarray:
    if not 0 <= action < n_actions:
        raise ShapeError(f"action {action} out of range")
    out = np.zeros(n_actions)
    out[action] = 1.0
    return out


def action_onehot_rows(actions, n_actions: int) -> np.ndarray:
    idx = np.asarray(actions, dtype=np.intp)
    out = np.zeros((idx.shape[0], n_actions))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


# ------------------------------------------------------------- traced builders


def _head_rows(tape: Tape, pv: dict[str, Var], w1: str, b1: str, w2: str, b2: str, x: Var) -> Var:
    hidden = tape.tanh(tape.affine_rows(x, pv[w1], pv[b1]))
    return tape.affine_rows(hidden, pv[w2], pv[b2])


def gaussian_head_rows(
    tape: Tape, pv: dict[str, Var], scale: str, ha_rows: Var, cfg: WorldModelConfig
) -> tuple[Var, Var]:
    """(mean rows, clamped log-variance rows) for a Gaussian scale."""
    dim = cfg.gaussian_dim(scale)
    out = _head_rows(
        tape,
        pv,
        pred_name(scale, "w1"),
        pred_name(scale, "b1"),
        pred_name(scale, "w2"),
        pred_name(scale, "b2"),
        ha_rows,
    )
    mean = tape.slice_cols(out, 0, dim)
    logvar = tape.clip(tape.slice_cols(out, dim, 2 * dim), LOGVAR_LO, LOGVAR_HI)
    return mean, logvar


def meso_logits_rows(tape: Tape, pv: dict[str, Var], ha_rows: Var, cfg: WorldModelConfig) -> Var:
    return _head_rows(
        tape,
        pv,
        pred_name("meso", "w1"),
        pred_name("meso", "b1"),
        pred_name("meso", "w2"),
        pred_name("meso", "b2"),
        ha_rows,
    )


def utility_scale_rows(
    tape: Tape, pv: dict[str, Var], scale: str, za_rows: Var
) -> Var:
    """Per-row scalar utility for one scale, shape (n, 1)."""
    return _head_rows(
        tape,
        pv,
        util_name(scale, "w1"),
        util_name(scale, "b1"),
        util_name(scale, "w2"),
        util_name(scale, "b2"),
        za_rows,
    )


def utility_total_rows(
    tape: Tape, pv: dict[str, Var], za_rows: Var, cfg: WorldModelConfig
) -> Var:
    """Scale-weighted utility per row, shape (n, 1)."""
    total: Var | None = None
    for scale in SCALES:
        term = tape.scale(utility_scale_rows(tape, pv, scale, za_rows), cfg.weights[scale])
        total = term if total is None else tape.add(total, term)
    assert total is not None
    return total


# ---------------------------------------------------------------- eager facade


def predict_scale(
    params, scale: str, h: np.ndarray, action: int, cfg: WorldModelConfig
) -> ScaleBelief:
    """Belief over the next state of one scale given memory and action."""
    if scale not in SCALES:
        raise ShapeError(f"unknown scale {scale!r}")
    tape = Tape()
    pv = const_vars(tape, params)
    ha = np.concatenate([np.asarray(h, dtype=np.float64), action_onehot(action, cfg.n_actions)])
    ha_rows = tape.const(ha[None, :])
    if scale == "meso":
        logits = meso_logits_rows(tape, pv, ha_rows, cfg)
        probs = tape.softmax(logits).val[0]
        return ScaleBelief(scale=scale, probs=probs)
    mean, logvar = gaussian_head_rows(tape, pv, scale, ha_rows, cfg)
    return ScaleBelief(scale=scale, mean=mean.val[0], var=np.exp(logvar.val[0]))


def pred_loss_scale(
    scale: str, belief: ScaleBelief, true_state, flags: PredFlags | None = None
) -> float:
    """Prediction loss of one scale against the true next state.

    Gaussian scales: 0.5 * ||true - mean||^2. Categorical: -log p[true bin],
    capped at -log(1e-12); the cap raises the `capped` flag.
    """
    if belief.kind == "gaussian":
        true_vec = np.asarray(true_state, dtype=np.float64)
        if true_vec.shape != belief.mean.shape:
            raise ShapeError("true state shape differs from belief")
        diff = true_vec - belief.mean
        return 0.5 * float(diff @ diff)
    probs = belief.probs
    if isinstance(true_state, np.ndarray) and np.asarray(true_state).ndim == 1:
        onehot = np.asarray(true_state, dtype=np.float64)
        if onehot.shape != probs.shape:
            raise ShapeError("one-hot target shape differs from belief")
        bin_idx = int(np.argmax(onehot))
    else:
        bin_idx = int(true_state)
    if not 0 <= bin_idx < probs.shape[0]:
        raise ShapeError(f"true bin {bin_idx} out of range")
    p = float(probs[bin_idx])
    loss = -math.log(p) if p > 0.0 else math.inf
    if loss > MESO_LOSS_CAP:
        if flags is not None:
            flags.capped += 1
        return MESO_LOSS_CAP
    return loss


def pred_loss_total(per_scale: dict[str, float], weights: ScaleWeights) -> float:
    """Scale-weighted sum of per-scale prediction losses."""
    return float(sum(weights[scale] * per_scale[scale] for scale in SCALES))


def kl_gaussian(p: ScaleBelief, q: ScaleBelief) -> float:
    """KL(p || q) for diagonal Gaussians, in closed form."""
    if p.kind != "gaussian" or q.kind != "gaussian":
        raise ContractError("kl_gaussian requires gaussian beliefs")
    if p.mean.shape != q.mean.shape:
        raise ShapeError("kl_gaussian: dimension mismatch")
    ratio = p.var / q.var
    mean_term = (q.mean - p.mean) ** 2 / q.var
    return 0.5 * float(np.sum(ratio + mean_term - 1.0 - np.log(ratio)))


def utility(params, scale: str, z: np.ndarray, action: int, cfg: WorldModelConfig) -> float:
    """Single-scale utility of (z, action)."""
    tape = Tape()
    pv = const_vars(tape, params)
    za = np.concatenate([np.asarray(z, dtype=np.float64), action_onehot(action, cfg.n_actions)])
    return float(utility_scale_rows(tape, pv, scale, tape.const(za[None, :])).val[0, 0])


def utility_total(params, z: np.ndarray, action: int, cfg: WorldModelConfig) -> float:
    """Scale-weighted utility of (z, action)."""
    return float(utilities(params, z, cfg)[action])


def utilities(params, z: np.ndarray, cfg: WorldModelConfig) -> np.ndarray:
    """Utility of z paired with every action, shape (n_actions,)."""
    return utilities_rows(params, np.asarray(z, dtype=np.float64)[None, :], cfg)[0]


def utilities_rows(params, z_rows: np.ndarray, cfg: WorldModelConfig) -> np.ndarray:
    """Utility grid for a batch of z rows, shape (n, n_actions)."""
    z_rows = np.asarray(z_rows, dtype=np.float64)
    n, n_actions = z_rows.shape[0], cfg.n_actions
    tiled_z = np.repeat(z_rows, n_actions, axis=0)
    tiled_a = np.tile(np.eye(n_actions), (n, 1))
    tape = Tape()
    pv = const_vars(tape, params)
    za = tape.const(np.hstack([tiled_z, tiled_a]))
    vals = utility_total_rows(tape, pv, za, cfg).val
    return vals.reshape(n, n_actions)


def utility_td_target(
    reward: float,
    done: bool,
    z_next: np.ndarray,
    params,
    cfg: WorldModelConfig,
    gamma: float,
) -> float:
    """r + gamma * max_a U(z', a), or just r on termination. Detached."""
    if done:
        return float(reward)
    return float(reward) + gamma * float(np.max(utilities(params, z_next, cfg)))
