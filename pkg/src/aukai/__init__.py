"""Multi-scale predictive agent with a verified learning core.

A small, numpy-only research codebase: a tape-based reverse-mode
autodiff kernel, an encoder/decoder perception stage, a gated recurrent
memory with a Polyak-averaged target, a multi-scale world model with a
TD-trained utility critic, projection-based gradient surgery, an exact
Bayesian occupancy layer, gridworld environments, and a convergence
lab (Bellman contraction, descent monitoring, step-size schedules).
"""

from .autodiff import ContractError, NonFiniteError, ShapeError, Tape, Tensor, Var
from .config import ConfigError, RunConfig, default_config, load_config
from .params import ParameterSet

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "Var",
    "ConfigError",
    "RunConfig",
    "default_config",
    "load_config",
    "ParameterSet",
    "__version__",
]
