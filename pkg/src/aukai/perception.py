"""Observation preprocessing and the encoder/decoder pair.

The encoder maps the flattened multi-scale observation to the latent
state s; the decoder mirrors it back so reconstruction error can anchor
the latent. Both are affine-tanh-affine stacks. In dual-stream wiring
the encoder shares its first layer and splits at the second into a
knowledge head (feeds memory and prediction) and an action head (feeds
the utility input).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, ShapeError, Tape, Tensor, Var
from .params import const_vars, init_bias, init_matrix

SCALES = ("micro", "meso", "macro")

ENC_W1 = "perc.enc_w1"
ENC_B1 = "perc.enc_b1"
ENC_W2 = "perc.enc_w2"
ENC_B2 = "perc.enc_b2"
ENC_W2A = "perc.enc_w2a"
ENC_B2A = "perc.enc_b2a"
DEC_W1 = "perc.dec_w1"
DEC_B1 = "perc.dec_b1"
DEC_W2 = "perc.dec_w2"
DEC_B2 = "perc.dec_b2"


@dataclass(frozen=True)
class PerceptionConfig:
    input_dim: int
    hidden_dim: int
    state_dim: int
    dual_stream: bool = False

    def __post_init__(self) -> None:
        if min(self.input_dim, self.hidden_dim, self.state_dim) < 1:
            raise ValueError("perception dims must be positive")


def init_params(cfg: PerceptionConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    p = {
        ENC_W1: init_matrix(rng, cfg.hidden_dim, cfg.input_dim),
        ENC_B1: init_bias(cfg.hidden_dim),
        ENC_W2: init_matrix(rng, cfg.state_dim, cfg.hidden_dim),
        ENC_B2: init_bias(cfg.state_dim),
        DEC_W1: init_matrix(rng, cfg.hidden_dim, cfg.state_dim),
        DEC_B1: init_bias(cfg.hidden_dim),
        DEC_W2: init_matrix(rng, cfg.input_dim, cfg.hidden_dim),
        DEC_B2: init_bias(cfg.input_dim),
    }
    if cfg.dual_stream:
        # action head drawn last so shared tensors match a single-stream init
        p[ENC_W2A] = init_matrix(rng, cfg.state_dim, cfg.hidden_dim)
        p[ENC_B2A] = init_bias(cfg.state_dim)
    return p


# ------------------------------------------------------------- traced builders


def encode_rows(tape: Tape, pv: dict[str, Var], x_rows: Var, head: str = "knowledge") -> Var:
    hidden = tape.tanh(tape.affine_rows(x_rows, pv[ENC_W1], pv[ENC_B1]))
    if head == "knowledge":
        return tape.affine_rows(hidden, pv[ENC_W2], pv[ENC_B2])
    if head == "action":
        if ENC_W2A not in pv:
            raise ContractError("action head requested on a single-stream encoder")
        return tape.affine_rows(hidden, pv[ENC_W2A], pv[ENC_B2A])
    raise ContractError(f"unknown encoder head {head!r}")


def decode_rows(tape: Tape, pv: dict[str, Var], s_rows: Var) -> Var:
    hidden = tape.tanh(tape.affine_rows(s_rows, pv[DEC_W1], pv[DEC_B1]))
    return tape.affine_rows(hidden, pv[DEC_W2], pv[DEC_B2])


def reconstruction_error_rows(tape: Tape, pv: dict[str, Var], x_rows: Var) -> Var:
    """Rows of x - decode(encode(x)), knowledge head."""
    return tape.sub(x_rows, decode_rows(tape, pv, encode_rows(tape, pv, x_rows)))


# ---------------------------------------------------------------- eager facade


def _eager(params, x: np.ndarray):
    tape = Tape()
    pv = const_vars(tape, params)
    xr = tape.const(np.asarray(x, dtype=np.float64)[None, :])
    return tape, pv, xr


def encode(params, x: np.ndarray) -> np.ndarray:
    """Latent state for one observation vector."""
    tape, pv, xr = _eager(params, x)
    return encode_rows(tape, pv, xr).val[0]


def encode_dual(params, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(knowledge, action) latents; requires dual-stream parameters."""
    tape, pv, xr = _eager(params, x)
    s_k = encode_rows(tape, pv, xr, head="knowledge").val[0]
    s_a = encode_rows(tape, pv, xr, head="action").val[0]
    return s_k, s_a


def decode(params, s: np.ndarray) -> np.ndarray:
    tape = Tape()
    pv = const_vars(tape, params)
    sr = tape.const(np.asarray(s, dtype=np.float64)[None, :])
    return decode_rows(tape, pv, sr).val[0]


def perception_loss(params, x: np.ndarray) -> float:
    """Squared reconstruction error ||x - decode(encode(x))||^2."""
    tape, pv, xr = _eager(params, x)
    err = reconstruction_error_rows(tape, pv, xr)
    return float(tape.sum_sq(err).val)


# ---------------------------------------------------------------- preprocessing


@dataclass
class Preprocessed:
    """Per-scale observation vectors normalized into [-1, 1]."""

    scales: dict[str, np.ndarray]
    vector: np.ndarray
    clamped: int = 0
    ranges: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)


def preprocess(
    raw: dict[str, np.ndarray],
    ranges: dict[str, tuple[np.ndarray, np.ndarray]],
) -> Preprocessed:
    """Min-max normalize each scale into [-1, 1] using declared ranges.

    Values outside the declared range are clamped and counted.
    """
    out: dict[str, np.ndarray] = {}
    clamped = 0
    for scale in SCALES:
        if scale not in raw:
            raise ShapeError(f"observation missing scale {scale!r}")
        x = np.asarray(raw[scale], dtype=np.float64)
        lo, hi = ranges[scale]
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if lo.shape != x.shape or hi.shape != x.shape:
            raise ShapeError(f"range shape mismatch for scale {scale!r}")
        if np.any(hi <= lo):
            raise ShapeError(f"degenerate range for scale {scale!r}")
        y = 2.0 * (x - lo) / (hi - lo) - 1.0
        clamped += int(np.sum((y < -1.0) | (y > 1.0)))
        out[scale] = np.clip(y, -1.0, 1.0)
    vector = np.concatenate([out[s] for s in SCALES])
    return Preprocessed(scales=out, vector=vector, clamped=clamped, ranges=ranges)
