"""Convergence verification lab.

Small self-contained checks that the optimization building blocks have
the properties the training loop relies on: the cost-minimizing Bellman
operator is a sup-norm contraction, noisy loss series descend on
average, and the decaying step-size schedule converges where a constant
one plateaus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Tensor
from .environment import FiniteMDP
from .optimizer import Schedule, sgd_step
from .params import ParameterSet


def bellman_apply(values: np.ndarray, mdp: FiniteMDP, gamma: float) -> np.ndarray:
    """(TV)(s) = min_a [ c(s,a) + gamma * sum_s' P(s'|s,a) V(s') ]."""
    if not 0.0 <= gamma < 1.0:
        raise ContractError("gamma must lie in [0, 1)")
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (mdp.n_states,):
        raise ContractError("value vector length must match the state count")
    q = mdp.costs + gamma * np.einsum("san,n->sa", mdp.transitions, values)
    return q.min(axis=1)


def value_iteration(
    mdp: FiniteMDP, gamma: float, tol: float = 1e-10, max_iter: int = 1_000_000
) -> tuple[np.ndarray, int]:
    """Iterate T from zero until the sup-norm step falls below tol."""
    if tol <= 0.0:
        raise ContractError("tol must be positive")
    values = np.zeros(mdp.n_states)
    for iteration in range(1, max_iter + 1):
        nxt = bellman_apply(values, mdp, gamma)
        delta = float(np.max(np.abs(nxt - values)))
        values = nxt
        if delta < tol:
            return values, iteration
    raise ContractError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def contraction_ratio(
    mdp: FiniteMDP, gamma: float, v1: np.ndarray, v2: np.ndarray
) -> float:
    """||T v1 - T v2||_inf / ||v1 - v2||_inf; undefined for v1 == v2."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    denom = float(np.max(np.abs(v1 - v2)))
    if denom == 0.0:
        raise ContractError("contraction ratio undefined for identical inputs")
    num = float(np.max(np.abs(bellman_apply(v1, mdp, gamma) - bellman_apply(v2, mdp, gamma))))
    return num / denom


@dataclass
class DescentReport:
    """Comparison of consecutive disjoint window means of a loss series."""

    window: int
    comparisons: int
    violations: int

    @property
    def descending_fraction(self) -> float:
        if self.comparisons == 0:
            return 0.0
        return 1.0 - self.violations / self.comparisons


def lyapunov_monitor(series, window: int) -> DescentReport:
    """Count non-descents between consecutive window means.

    A comparison counts as descending only for a strict decrease, so a
    constant series flags every comparison.
    """
    if window < 1:
        raise ContractError("window must be positive")
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1:
        raise ContractError("series must be 1-d")
    blocks = series.shape[0] // window
    if blocks < 2:
        return DescentReport(window=window, comparisons=0, violations=0)
    means = series[: blocks * window].reshape(blocks, window).mean(axis=1)
    diffs = np.diff(means)
    return DescentReport(
        window=window, comparisons=diffs.shape[0], violations=int(np.sum(diffs >= 0.0))
    )


@dataclass
class RMRun:
    seed: int
    final_distance: float


@dataclass
class RMReport:
    schedule: Schedule
    steps: int
    noise: float
    runs: list[RMRun] = field(default_factory=list)

    @property
    def final_distances(self) -> np.ndarray:
        return np.array([r.final_distance for r in self.runs])


def rm_demo(
    schedule: Schedule,
    noise: float,
    seeds,
    steps: int = 100_000,
    dim: int = 5,
) -> RMReport:
    """SGD on a noisy quadratic under the given step-size schedule.

    The objective is 0.5 * ||theta||^2 observed through gradients
    theta + noise; the demo reports the final distance to the optimum
    per seed, using the same sgd_step the trainer uses.
    """
    if noise < 0.0 or steps < 1 or dim < 1:
        raise ContractError("rm_demo needs noise >= 0, steps >= 1, dim >= 1")
    report = RMReport(schedule=schedule, steps=steps, noise=noise)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        params = ParameterSet({"theta": Tensor(np.ones(dim))})
        for t in range(steps):
            theta = params["theta"].data
            grad = theta + rng.normal(0.0, noise, dim)
            params = sgd_step(params, {"theta": grad}, schedule.eta(t))
        final = float(np.linalg.norm(params["theta"].data))
        report.runs.append(RMRun(seed=int(seed), final_distance=final))
    return report
