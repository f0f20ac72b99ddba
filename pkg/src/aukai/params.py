"""Named parameter tensors shared by the trainable modules."""

from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from .autodiff import Tape, Tensor, Var


class ParameterSet:
    """Ordered mapping of parameter names to tensors.

    The trainer owns the single live set; everything else works on
    read-only views or copies.
    """

    def __init__(self, tensors: Mapping[str, Tensor] | None = None) -> None:
        self._tensors: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._tensors.items()}

    def total_size(self) -> int:
        return sum(v.size for v in self._tensors.values())

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self._tensors.items() if k.startswith(prefix)}

    def copy(self) -> "ParameterSet":
        return ParameterSet(self._tensors)

    def with_updates(self, updates: Mapping[str, np.ndarray | Tensor]) -> "ParameterSet":
        out = dict(self._tensors)
        for name, value in updates.items():
            if name not in out:
                raise KeyError(f"unknown parameter {name!r}")
            out[name] = value if isinstance(value, Tensor) else Tensor(value)
        return ParameterSet(out)

    def l2(self) -> float:
        """Sum of squared entries over all tensors."""
        return float(sum(np.sum(t.data * t.data) for t in self._tensors.values()))


def leaf_vars(tape: Tape, params: ParameterSet | Mapping[str, Tensor]) -> dict[str, Var]:
    items = params.items() if hasattr(params, "items") else params
    return {name: tape.leaf(name, t.data) for name, t in items}


def const_vars(tape: Tape, params: ParameterSet | Mapping[str, Tensor]) -> dict[str, Var]:
    items = params.items() if hasattr(params, "items") else params
    return {name: tape.const(t.data) for name, t in items}


def init_matrix(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    """Gaussian init scaled by fan-in."""
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols)))


def init_bias(rows: int) -> Tensor:
    return Tensor(np.zeros(rows))
