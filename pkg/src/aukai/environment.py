"""Grid navigation environment with multi-scale observations.

Maps are square ASCII grids: '#' obstacle, '.' free, 'S' start, 'G'
goal. Moves are deterministic and 4-connected; bumping a wall or an
obstacle keeps the position and costs the collision penalty. The local
3x3 sensor is the only noisy channel; the meso scale averages it over a
short window and the macro scale is a coarse map summary plus the unit
goal direction.

Also hosts the small finite MDPs used by the convergence lab.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, ShapeError

N_ACTIONS = 4
ACTION_LABELS = ("north", "south", "east", "west")
ACTION_DELTAS = {0: (-1, 0), 1: (1, 0), 2: (0, 1), 3: (0, -1)}

MICRO_DIM = 9

BUILTIN_MAPS = {
    # fixed 8x8 test map: walled corridors keep a random walker away from G
    "test8x8": (
        "S.......\n"
        ".####.#.\n"
        ".#...#..\n"
        ".#.#.#.#\n"
        "...#...#\n"
        ".#.###.#\n"
        ".#...#.G\n"
        ".###...#\n"
    ),
    "open6": (
        "S.....\n"
        "......\n"
        "..##..\n"
        "..##..\n"
        "......\n"
        ".....G\n"
    ),
}


def load_map(source: str) -> str:
    """Resolve a map reference: 'builtin:<name>' or a file path."""
    if source.startswith("builtin:"):
        name = source.split(":", 1)[1]
        if name not in BUILTIN_MAPS:
            raise ContractError(f"unknown builtin map {name!r}")
        return BUILTIN_MAPS[name]
    try:
        with open(source) as fh:
            return fh.read()
    except OSError as exc:
        raise ContractError(f"cannot read map file {source!r}: {exc}") from exc


@dataclass(frozen=True)
class GridConfig:
    sigma_obs: float = 0.05
    step_reward: float = -0.01
    collision_reward: float = -1.0
    goal_reward: float = 1.0
    max_steps: int = 40
    k_macro: int = 4
    tau_meso: int = 4
    meso_bins: int = 5

    def __post_init__(self) -> None:
        if self.sigma_obs < 0.0:
            raise ValueError("sigma_obs must be non-negative")
        if self.max_steps < 1 or self.tau_meso < 1 or self.k_macro < 1:
            raise ValueError("max_steps, tau_meso and k_macro must be positive")
        if self.meso_bins < 2:
            raise ValueError("meso_bins must be at least 2")


@dataclass
class MultiScaleObservation:
    micro: np.ndarray
    meso: np.ndarray
    macro: np.ndarray
    reward: float
    done: bool

    def scales(self) -> dict[str, np.ndarray]:
        return {"micro": self.micro, "meso": self.meso, "macro": self.macro}


@dataclass
class TrueScales:
    """Noiseless per-scale states used as prediction targets."""

    micro: np.ndarray
    meso_bin: int
    macro: np.ndarray


def meso_bin_of(mean_occupancy: float, bins: int) -> int:
    """Quantize a [0, 1] occupancy mean into equal bins; 1.0 lands on top."""
    if not 0.0 <= mean_occupancy <= 1.0:
        raise ShapeError("mean occupancy must lie in [0, 1]")
    return min(int(mean_occupancy * bins), bins - 1)


class GridWorld:
    """Deterministic square grid with a noisy local occupancy sensor."""

    def __init__(self, text: str, cfg: GridConfig, rng: np.random.Generator) -> None:
        rows = [line for line in text.splitlines() if line.strip()]
        if len(rows) < 4:
            raise ContractError("map must be at least 4x4")
        n = len(rows)
        if any(len(r) != n for r in rows):
            raise ContractError("map must be square")
        occupancy = np.zeros((n, n))
        start = goal = None
        for r, line in enumerate(rows):
            for c, ch in enumerate(line):
                if ch == "#":
                    occupancy[r, c] = 1.0
                elif ch == "S":
                    if start is not None:
                        raise ContractError("map must have exactly one start")
                    start = (r, c)
                elif ch == "G":
                    if goal is not None:
                        raise ContractError("map must have exactly one goal")
                    goal = (r, c)
                elif ch != ".":
                    raise ContractError(f"bad map character {ch!r}")
        if start is None or goal is None:
            raise ContractError("map needs one start and one goal")
        if n % cfg.k_macro != 0:
            raise ContractError(f"k_macro {cfg.k_macro} must divide map size {n}")
        self.size = n
        self.occupancy = occupancy
        self.start = start
        self.goal = goal
        self.cfg = cfg
        self.rng = rng
        self.agent_position = start
        self.steps = 0
        self.terminated = False
        self._true_window: deque[np.ndarray] = deque(maxlen=cfg.tau_meso)
        self._noisy_window: deque[np.ndarray] = deque(maxlen=cfg.tau_meso)
        self._macro_map = self._downsample()

    @classmethod
    def from_config(cls, map_source: str, cfg: GridConfig, rng: np.random.Generator) -> "GridWorld":
        return cls(load_map(map_source), cfg, rng)

    def clone(self) -> "GridWorld":
        return copy.deepcopy(self)

    # ------------------------------------------------------------ observations

    def _occupied(self, r: int, c: int) -> float:
        if not (0 <= r < self.size and 0 <= c < self.size):
            return 1.0  # beyond the edge reads as a wall
        return float(self.occupancy[r, c])

    def true_micro_patch(self, position: tuple[int, int] | None = None) -> np.ndarray:
        r0, c0 = position if position is not None else self.agent_position
        patch = np.empty(MICRO_DIM)
        i = 0
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                patch[i] = self._occupied(r0 + dr, c0 + dc)
                i += 1
        return patch

    def _downsample(self) -> np.ndarray:
        k = self.cfg.k_macro
        block = self.size // k
        out = self.occupancy.reshape(k, block, k, block).mean(axis=(1, 3))
        return out.ravel()

    def _goal_direction(self) -> np.ndarray:
        delta = np.array(
            [self.goal[0] - self.agent_position[0], self.goal[1] - self.agent_position[1]],
            dtype=np.float64,
        )
        norm = float(np.linalg.norm(delta))
        return delta / norm if norm > 0.0 else delta

    def _macro_vector(self) -> np.ndarray:
        return np.concatenate([self._macro_map, self._goal_direction()])

    @property
    def macro_dim(self) -> int:
        return self.cfg.k_macro ** 2 + 2

    def _sense(self, reward: float, done: bool) -> MultiScaleObservation:
        true_patch = self.true_micro_patch()
        noisy = true_patch + self.rng.normal(0.0, self.cfg.sigma_obs, MICRO_DIM)
        self._true_window.append(true_patch)
        self._noisy_window.append(noisy)
        meso = np.mean(np.stack(self._noisy_window), axis=0)
        return MultiScaleObservation(
            micro=noisy, meso=meso, macro=self._macro_vector(), reward=reward, done=done
        )

    def true_scale_states(self) -> TrueScales:
        mean_occ = float(np.mean(np.stack(self._true_window)))
        return TrueScales(
            micro=self.true_micro_patch(),
            meso_bin=meso_bin_of(mean_occ, self.cfg.meso_bins),
            macro=self._macro_vector(),
        )

    def scale_ranges(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        k2 = self.cfg.k_macro ** 2
        macro_lo = np.concatenate([np.zeros(k2), -np.ones(2)])
        macro_hi = np.ones(k2 + 2)
        return {
            "micro": (np.zeros(MICRO_DIM), np.ones(MICRO_DIM)),
            "meso": (np.zeros(MICRO_DIM), np.ones(MICRO_DIM)),
            "macro": (macro_lo, macro_hi),
        }

    # ----------------------------------------------------------------- dynamics

    def reset(self) -> MultiScaleObservation:
        self.agent_position = self.start
        self.steps = 0
        self.terminated = False
        self._true_window.clear()
        self._noisy_window.clear()
        return self._sense(0.0, False)

    def step(self, action: int) -> tuple[MultiScaleObservation, float, bool]:
        if self.terminated:
            raise ContractError("episode is over; call reset() first")
        if action not in ACTION_DELTAS:
            raise ShapeError(f"action {action} out of range")
        dr, dc = ACTION_DELTAS[action]
        r, c = self.agent_position
        nr, nc = r + dr, c + dc
        if self._occupied(nr, nc) > 0.0:
            reward = self.cfg.collision_reward
        else:
            self.agent_position = (nr, nc)
            reward = (
                self.cfg.goal_reward
                if self.agent_position == self.goal
                else self.cfg.step_reward
            )
        self.steps += 1
        done = self.agent_position == self.goal or self.steps >= self.cfg.max_steps
        self.terminated = done
        obs = self._sense(reward, done)
        return obs, reward, done

    @property
    def at_goal(self) -> bool:
        return self.agent_position == self.goal


# ------------------------------------------------------------------ finite MDPs


@dataclass(frozen=True)
class FiniteMDP:
    """Tabular MDP with costs; transitions[s, a] is a distribution over s'."""

    transitions: np.ndarray
    costs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.transitions, dtype=np.float64)
        c = np.asarray(self.costs, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ShapeError("transitions must have shape (n, m, n)")
        if c.shape != p.shape[:2]:
            raise ShapeError("costs must have shape (n, m)")
        if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-9):
            raise ContractError("transition rows must be distributions")
        if not np.all(np.isfinite(c)):
            raise ContractError("costs must be finite")
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "costs", c)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def random_mdp(n_states: int, n_actions: int, seed: int) -> FiniteMDP:
    """Random row-stochastic transitions with costs in [0, 1]."""
    if n_states < 1 or n_actions < 1:
        raise ShapeError("need at least one state and one action")
    rng = np.random.default_rng(seed)
    raw = rng.random((n_states, n_actions, n_states)) + 1e-9
    transitions = raw / raw.sum(axis=2, keepdims=True)
    costs = rng.random((n_states, n_actions))
    return FiniteMDP(transitions=transitions, costs=costs)


def two_state_cycle() -> FiniteMDP:
    """Two states, one action, deterministic swap, costs (1, 0)."""
    transitions = np.zeros((2, 1, 2))
    transitions[0, 0, 1] = 1.0
    transitions[1, 0, 0] = 1.0
    costs = np.array([[1.0], [0.0]])
    return FiniteMDP(transitions=transitions, costs=costs)
