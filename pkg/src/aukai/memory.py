"""Gated recurrent memory with a slow-moving target copy.

h' = (1-u) * h + u * c with update gate u = sigmoid(Wu [s;h] + bu) and
candidate c = tanh(Wc [s;h] + bc). Because c stays in (-1, 1) and h'
is a convex combination, the state never leaves (-1, 1) from a zero
start. The target copy is refreshed by Polyak averaging and supplies
the consistency target for the memory loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, Tape, Tensor, Var
from .params import const_vars, init_bias, init_matrix

W_UPDATE = "mem.w_update"
B_UPDATE = "mem.b_update"
W_CAND = "mem.w_cand"
B_CAND = "mem.b_cand"

MEMORY_NAMES = (W_UPDATE, B_UPDATE, W_CAND, B_CAND)


@dataclass(frozen=True)
class MemoryConfig:
    state_dim: int
    memory_dim: int

    def __post_init__(self) -> None:
        if min(self.state_dim, self.memory_dim) < 1:
            raise ValueError("memory dims must be positive")


def init_params(cfg: MemoryConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    joint = cfg.state_dim + cfg.memory_dim
    return {
        W_UPDATE: init_matrix(rng, cfg.memory_dim, joint),
        B_UPDATE: init_bias(cfg.memory_dim),
        W_CAND: init_matrix(rng, cfg.memory_dim, joint),
        B_CAND: init_bias(cfg.memory_dim),
    }


def init_state(cfg: MemoryConfig) -> np.ndarray:
    return np.zeros(cfg.memory_dim)


def cell_rows(tape: Tape, pv: dict[str, Var], s_rows: Var, h_rows: Var) -> Var:
    """One gated update per row; rows are independent."""
    joint = tape.hstack([s_rows, h_rows])
    update = tape.sigmoid(tape.affine_rows(joint, pv[W_UPDATE], pv[B_UPDATE]))
    cand = tape.tanh(tape.affine_rows(joint, pv[W_CAND], pv[B_CAND]))
    ones = tape.const(np.ones_like(update.val))
    return tape.add(tape.mul(tape.sub(ones, update), h_rows), tape.mul(update, cand))


def memory_step(params, s: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Next memory state for a single (s, h) pair."""
    tape = Tape()
    pv = const_vars(tape, params)
    sr = tape.const(np.asarray(s, dtype=np.float64)[None, :])
    hr = tape.const(np.asarray(h, dtype=np.float64)[None, :])
    return cell_rows(tape, pv, sr, hr).val[0]


def target_step(target_params, s: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Memory step under the frozen target parameters."""
    return memory_step(target_params, s, h)


def memory_loss(params, target_params, s: np.ndarray, h: np.ndarray) -> float:
    """||step(s,h) - target_step(s,h)||^2."""
    h_next = memory_step(params, s, h)
    h_tgt = target_step(target_params, s, h)
    diff = h_next - h_tgt
    return float(diff @ diff)


def update_target(
    target_params: dict[str, Tensor], params, tau: float
) -> dict[str, Tensor]:
    """Polyak refresh: target <- tau * online + (1 - tau) * target."""
    if not 0.0 <= tau <= 1.0:
        raise ContractError("tau must lie in [0, 1]")
    out: dict[str, Tensor] = {}
    for name, tgt in target_params.items():
        src = params[name]
        if src.shape != tgt.shape:
            raise ContractError(f"target shape mismatch for {name!r}")
        out[name] = Tensor(tau * src.data + (1.0 - tau) * tgt.data)
    return out
