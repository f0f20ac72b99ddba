"""Run configuration: sectioned key=value files, validation, hashing."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields
from pathlib import Path

from . import environment, optimizer, world_model
from .decision import EpsilonSchedule
from .symbolic import SensorModel

MODES = ("modeling_only", "intervention_only", "dual_flow")
STREAMS = ("single", "dual")


class ConfigError(ValueError):
    """Invalid or unusable run configuration."""


@dataclass
class RunConfig:
    # run
    mode: str = "modeling_only"
    stream: str = "single"
    hybrid: bool = True
    pcgrad: bool = True
    seed: int = 0
    steps: int = 1000
    checkpoint_every: int = 5000
    # model
    state_dim: int = 12
    memory_dim: int = 32
    encoder_hidden: int = 32
    wm_hidden: int = 32
    # optim
    gamma: float = 0.95
    beta: float = 0.5
    lam: float = 1e-4
    window: int = 16
    eta0: float = 0.03
    eta_decay: float = 1.0
    eta_t0: float = 8000.0
    tau_polyak: float = 0.01
    minimal_update: bool = False
    # explore
    eps0: float = 1.0
    eps_min: float = 0.05
    eps_decay_steps: int = 30000
    # scales
    w_micro: float = 0.5
    w_meso: float = 0.2
    w_macro: float = 0.3
    tau_meso: int = 4
    k_meso: int = 5
    k_macro: int = 4
    # env
    map: str = "builtin:test8x8"
    sigma_obs: float = 0.05
    step_reward: float = -0.01
    collision_reward: float = -1.0
    goal_reward: float = 1.0
    max_episode_steps: int = 200
    carry_memory: bool = False
    # symbolic
    p_hit: float = 0.9
    p_false: float = 0.2
    rho: float = 0.6

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {self.mode!r}")
        if self.stream not in STREAMS:
            raise ConfigError(f"run.stream must be one of {STREAMS}, got {self.stream!r}")
        if self.seed < 0:
            raise ConfigError("run.seed must be non-negative")
        if self.steps < 1:
            raise ConfigError("run.steps must be positive")
        if self.checkpoint_every < 0:
            raise ConfigError("run.checkpoint_every must be non-negative")
        if self.state_dim < 2:
            raise ConfigError("model.state_dim must be at least 2")
        if min(self.memory_dim, self.encoder_hidden, self.wm_hidden) < 1:
            raise ConfigError("model dims must be positive")
        try:
            optimizer.Hyper(
                gamma=self.gamma, beta=self.beta, lam=self.lam, window=self.window
            )
            schedule = optimizer.Schedule(eta0=self.eta0, p=self.eta_decay, t0=self.eta_t0)
            EpsilonSchedule(
                eps0=self.eps0, eps_min=self.eps_min, decay_steps=self.eps_decay_steps
            )
            world_model.ScaleWeights.normalized(self.w_micro, self.w_meso, self.w_macro)
            SensorModel(p_hit=self.p_hit, p_false=self.p_false)
            environment.GridConfig(
                sigma_obs=self.sigma_obs,
                step_reward=self.step_reward,
                collision_reward=self.collision_reward,
                goal_reward=self.goal_reward,
                max_steps=self.max_episode_steps,
                k_macro=self.k_macro,
                tau_meso=self.tau_meso,
                meso_bins=self.k_meso,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        valid, reason = optimizer.validate_schedule(schedule)
        if not valid:
            raise ConfigError(f"optim schedule invalid: {reason}")
        if not 0.0 <= self.tau_polyak <= 1.0:
            raise ConfigError("optim.tau_polyak must lie in [0, 1]")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("symbolic.rho must lie in [0, 1)")
        try:
            environment.load_map(self.map)
        except Exception as exc:
            raise ConfigError(f"env.map unusable: {exc}") from exc


_SECTIONS: dict[str, tuple[str, ...]] = {
    "run": ("mode", "stream", "hybrid", "pcgrad", "seed", "steps", "checkpoint_every"),
    "model": ("state_dim", "memory_dim", "encoder_hidden", "wm_hidden"),
    "optim": (
        "gamma",
        "beta",
        "lambda",
        "window",
        "eta0",
        "eta_decay",
        "eta_t0",
        "tau_polyak",
        "minimal_update",
    ),
    "explore": ("eps0", "eps_min", "eps_decay_steps"),
    "scales": ("w_micro", "w_meso", "w_macro", "tau_meso", "k_meso", "k_macro"),
    "env": (
        "map",
        "sigma_obs",
        "step_reward",
        "collision_reward",
        "goal_reward",
        "max_episode_steps",
        "carry_memory",
    ),
    "symbolic": ("p_hit", "p_false", "rho"),
}

# 'lambda' is a keyword, so the dataclass field is 'lam'
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def _field_name(key: str) -> str:
    return _KEY_TO_FIELD.get(key, key)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_text(cfg: RunConfig) -> str:
    """Canonical echo: fixed section and key order."""
    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for key in keys:
            out.write(f"{key} = {_render(getattr(cfg, _field_name(key)))}\n")
        out.write("\n")
    return out.getvalue()


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(to_text(cfg).encode()).hexdigest()


def _line_of(text: str, needle: str) -> str:
    """Best-effort line anchor for error messages."""
    for i, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith(needle):
            return f" (line {i})"
    return ""


def parse_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    field_types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(
                f"unknown config section [{section}]{_line_of(text, f'[{section}]')}"
            )
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section}]{_line_of(text, key)}"
                )
            name = _field_name(key)
            ftype = field_types[name]
            try:
                if ftype == "bool":
                    value = parser.getboolean(section, key)
                elif ftype == "int":
                    value = int(raw)
                elif ftype == "float":
                    value = float(raw)
                else:
                    value = raw
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r}{_line_of(text, key)}"
                ) from exc
            values[name] = value
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_text(text)


def default_config(**overrides) -> RunConfig:
    cfg = RunConfig(**overrides)
    cfg.validate()
    return cfg
