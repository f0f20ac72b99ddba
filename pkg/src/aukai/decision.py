"""Action selection over utility scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError
from . import world_model


@dataclass(frozen=True)
class ActionSpace:
    labels: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.labels)

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("action space must be non-empty")


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear anneal from eps0 to eps_min over decay_steps."""

    eps0: float
    eps_min: float
    decay_steps: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps_min <= self.eps0 <= 1.0:
            raise ValueError("need 0 <= eps_min <= eps0 <= 1")
        if self.decay_steps < 1:
            raise ValueError("decay_steps must be positive")

    def value(self, t: int) -> float:
        frac = min(max(t, 0) / self.decay_steps, 1.0)
        if frac >= 1.0:
            return self.eps_min
        return self.eps0 - (self.eps0 - self.eps_min) * frac


def greedy(values: np.ndarray) -> int:
    """Index of the largest value; ties go to the lowest index."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ShapeError("greedy expects a non-empty vector")
    return int(np.argmax(values))


def select_greedy(params, z: np.ndarray, cfg: world_model.WorldModelConfig) -> int:
    """Action maximizing the scale-weighted utility of z."""
    return greedy(world_model.utilities(params, z, cfg))


def select_epsilon_greedy(
    params,
    z: np.ndarray,
    cfg: world_model.WorldModelConfig,
    eps: float,
    rng: np.random.Generator,
) -> int:
    """Greedy action with probability 1-eps, uniform otherwise."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if rng.random() < eps:
        return int(rng.integers(cfg.n_actions))
    return select_greedy(params, z, cfg)
