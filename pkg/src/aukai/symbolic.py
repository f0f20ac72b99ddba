"""Occupancy belief, exact Bayes updates, and latent fusion.

The belief grid tracks P(occupied) per cell, updated from thresholded
local sensor readings with the exact two-hypothesis Bayes rule. Cells
believed occupied beyond a threshold repel the agent through a small
correction vector that is added to the latent state before the utility
input is fused.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ContractError, ShapeError, Tape, Var

# (d_row, d_col) per cardinal neighbor, pointing away from that neighbor
_REPULSION = {
    (-1, 0): np.array([1.0, 0.0]),
    (1, 0): np.array([-1.0, 0.0]),
    (0, 1): np.array([0.0, -1.0]),
    (0, -1): np.array([0.0, 1.0]),
}


@dataclass(frozen=True)
class SensorModel:
    """Hit/false-alarm rates of the thresholded occupancy sensor."""

    p_hit: float
    p_false: float

    def __post_init__(self) -> None:
        if not 0.0 < self.p_false < self.p_hit < 1.0:
            raise ValueError("need 0 < p_false < p_hit < 1")

    @classmethod
    def unchecked(cls, p_hit: float, p_false: float) -> "SensorModel":
        # escape hatch for tests probing degenerate sensors
        obj = object.__new__(cls)
        object.__setattr__(obj, "p_hit", p_hit)
        object.__setattr__(obj, "p_false", p_false)
        return obj


class OccupancyBelief:
    """Grid of occupancy probabilities."""

    def __init__(self, grid: np.ndarray) -> None:
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 2:
            raise ShapeError("belief grid must be 2-d")
        if np.any(grid < 0.0) or np.any(grid > 1.0):
            raise ContractError("belief values must lie in [0, 1]")
        self.grid = grid

    @classmethod
    def uniform(cls, size: int, prior: float = 0.5) -> "OccupancyBelief":
        return cls(np.full((size, size), prior))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def __getitem__(self, cell: tuple[int, int]) -> float:
        return float(self.grid[cell])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.grid:
                writer.writerow([f"{v:.17g}" for v in row])


def bayes_update(
    belief: OccupancyBelief,
    cell: tuple[int, int],
    observed_occupied: bool,
    sensor: SensorModel,
) -> OccupancyBelief:
    """Exact posterior for one cell given one thresholded reading."""
    r, c = cell
    rows, cols = belief.shape
    if not (0 <= r < rows and 0 <= c < cols):
        raise ShapeError(f"cell {cell} outside the {belief.shape} grid")
    prior = belief.grid[r, c]
    if observed_occupied:
        num = prior * sensor.p_hit
        den = num + (1.0 - prior) * sensor.p_false
    else:
        num = prior * (1.0 - sensor.p_hit)
        den = num + (1.0 - prior) * (1.0 - sensor.p_false)
    grid = belief.grid.copy()
    grid[r, c] = prior if den == 0.0 else num / den
    return OccupancyBelief(grid)


def correction(
    belief: OccupancyBelief, position: tuple[int, int], rho: float
) -> np.ndarray:
    """Repulsive (d_row, d_col) from neighbors believed occupied beyond rho."""
    if not 0.0 <= rho < 1.0:
        raise ContractError("rho must lie in [0, 1)")
    r, c = position
    rows, cols = belief.shape
    delta = np.zeros(2)
    for (dr, dc), away in _REPULSION.items():
        nr, nc = r + dr, c + dc
        if not (0 <= nr < rows and 0 <= nc < cols):
            continue
        p = belief.grid[nr, nc]
        if p > rho:
            delta = delta + (p - rho) * away
    return delta


def embed_correction(ds: np.ndarray, state_dim: int) -> np.ndarray:
    """Pad the 2-d correction into the first two latent coordinates."""
    ds = np.asarray(ds, dtype=np.float64)
    if ds.shape != (2,):
        raise ShapeError("correction must be a 2-vector")
    if state_dim < 2:
        raise ShapeError("state dim must be at least 2 to embed the correction")
    out = np.zeros(state_dim)
    out[:2] = ds
    return out


def fuse(s: np.ndarray, h: np.ndarray, ds: np.ndarray) -> np.ndarray:
    """z = concat(s + embedded correction, h)."""
    s = np.asarray(s, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    return np.concatenate([s + embed_correction(ds, s.shape[0]), h])


def fuse_rows(tape: Tape, s_rows: Var, h_rows: Var, ds_rows: np.ndarray) -> Var:
    """Traced fusion for a batch; the corrections enter as constants."""
    ds_rows = np.asarray(ds_rows, dtype=np.float64)
    n, dim = s_rows.val.shape
    if ds_rows.shape != (n, 2):
        raise ShapeError("need one 2-d correction per row")
    pad = np.zeros((n, dim))
    pad[:, :2] = ds_rows
    shifted = tape.add(s_rows, tape.const(pad))
    return tape.hstack([shifted, h_rows])
