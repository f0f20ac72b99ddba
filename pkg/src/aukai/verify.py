"""Built-in verification suites.

Each suite checks one family of guarantees through an independent
route: analytic gradients against central finite differences, gradient
routing against exact zero blocks, projection surgery against its
worked examples and the no-conflict bound, the occupancy update against
brute-force enumeration, the Bellman operator against the contraction
theorem, and step-size schedules against the noisy-quadratic demo. The
suites back the `verify` command and the acceptance tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import convergence, memory, optimizer, perception, world_model
from .agent import TransitionRecord
from .autodiff import Tape, Var, finite_diff_check
from .environment import TrueScales, random_mdp, two_state_cycle
from .optimizer import Hyper, Schedule, Trainer, pcgrad_flat, validate_schedule
from .params import ParameterSet
from .perception import Preprocessed
from .symbolic import SensorModel, bayes_update, OccupancyBelief
from .world_model import ScaleWeights


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    detail: str = ""


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, value: float, bound: float, detail: str = ""):
        self.checks.append(Check(name, bool(passed), float(value), float(bound), detail))

    def table(self) -> str:
        width = max(len(c.name) for c in self.checks) if self.checks else 4
        lines = [f"suite: {self.suite}"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            line = f"  {c.name:<{width}}  {status}  value={c.value:.3e}  bound={c.bound:.3e}"
            if c.detail:
                line += f"  ({c.detail})"
            lines.append(line)
        lines.append(f"result: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(
            {
                "suite": self.suite,
                "passed": self.passed,
                "checks": [
                    {
                        "name": c.name,
                        "passed": c.passed,
                        "value": c.value,
                        "bound": c.bound,
                        "detail": c.detail,
                    }
                    for c in self.checks
                ],
            }
        )


# ---------------------------------------------------------------- gradients

FD_TOL = 1e-4

_P = perception.PerceptionConfig(input_dim=5, hidden_dim=4, state_dim=3)
_M = memory.MemoryConfig(state_dim=3, memory_dim=4)


def _wcfg() -> world_model.WorldModelConfig:
    return world_model.WorldModelConfig(
        memory_dim=_M.memory_dim,
        fused_dim=_P.state_dim + _M.memory_dim,
        n_actions=2,
        hidden_dim=4,
        micro_dim=2,
        macro_dim=2,
        meso_bins=3,
        weights=ScaleWeights.normalized(0.5, 0.2, 0.3),
    )


def _data(params) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in params.items()}


def _make_perception(rng):
    tensors = perception.init_params(_P, rng)
    x = rng.normal(size=(2, _P.input_dim))
    w = np.array([1.0, 0.9])

    def build(tape: Tape, lv: dict[str, Var]) -> Var:
        s = perception.encode_rows(tape, lv, tape.const(x))
        err = tape.sub(tape.const(x), perception.decode_rows(tape, lv, s))
        return tape.weighted_sumsq(err, w)

    return _data(tensors), build


def _make_memory(rng):
    tensors = memory.init_params(_M, rng)
    target = memory.init_params(_M, rng)
    s = rng.normal(size=(2, _M.state_dim))
    h = rng.normal(size=(2, _M.memory_dim))
    w = np.array([1.0, 0.9])
    t_tape = Tape()
    tv = {k: t_tape.const(v.data) for k, v in target.items()}
    target_vals = memory.cell_rows(t_tape, tv, t_tape.const(s), t_tape.const(h)).val

    def build(tape: Tape, lv: dict[str, Var]) -> Var:
        h_new = memory.cell_rows(tape, lv, tape.const(s), tape.const(h))
        return tape.weighted_sumsq(tape.sub(h_new, tape.const(target_vals)), w)

    return _data(tensors), build


def _make_pred(scale: str, sabotage: bool = False):
    def make(rng):
        cfg = _wcfg()
        full = perception.init_params(_P, rng)
        enc_names = (perception.ENC_W1, perception.ENC_B1, perception.ENC_W2, perception.ENC_B2)
        tensors = {n: full[n] for n in enc_names}
        tensors.update(memory.init_params(_M, rng))
        wm = world_model.init_params(cfg, rng)
        names = [world_model.pred_name(scale, p) for p in ("w1", "b1", "w2", "b2")]
        tensors.update({n: wm[n] for n in names})
        x = rng.normal(size=(2, _P.input_dim))
        h0 = rng.normal(size=(2, _M.memory_dim))
        onehot = world_model.action_onehot_rows(
            rng.integers(cfg.n_actions, size=2), cfg.n_actions
        )
        w = np.array([1.0, 0.9])
        if scale == "meso":
            bins = rng.integers(cfg.meso_bins, size=2)
        else:
            true = rng.normal(size=(2, cfg.gaussian_dim(scale)))

        def build(tape: Tape, lv: dict[str, Var]) -> Var:
            s = perception.encode_rows(tape, lv, tape.const(x))
            h = memory.cell_rows(tape, lv, s, tape.const(h0))
            ha = tape.hstack([h, tape.const(onehot)])
            if scale == "meso":
                logp = tape.log_softmax(world_model.meso_logits_rows(tape, lv, ha, cfg))
                picked = tape.pick_rows(logp, bins)
                nll = _bad_neg(tape, picked) if sabotage else tape.neg(picked)
                return tape.dot(nll, tape.const(w))
            mean, _ = world_model.gaussian_head_rows(tape, lv, scale, ha, cfg)
            err = tape.sub(tape.const(true), mean)
            return tape.scale(tape.weighted_sumsq(err, w), 0.5)

        return _data(tensors), build

    return make


def _bad_neg(tape: Tape, a: Var) -> Var:
    """Negation with a deliberately wrong adjoint. Harness self-test only."""
    return tape._node("neg", -a.val, ((a.id, lambda g: g),))


def _make_td(rng):
    cfg = _wcfg()
    wm = world_model.init_params(cfg, rng)
    names = [
        world_model.util_name(s, p)
        for s in world_model.SCALES
        for p in ("w1", "b1", "w2", "b2")
    ]
    tensors = {n: wm[n] for n in names}
    za = rng.normal(size=(2, cfg.fused_dim + cfg.n_actions))
    y = rng.normal(size=(2, 1))
    w = np.array([1.0, 0.9])

    def build(tape: Tape, lv: dict[str, Var]) -> Var:
        u = world_model.utility_total_rows(tape, lv, tape.const(za), cfg)
        return tape.scale(tape.weighted_sumsq(tape.sub(u, tape.const(y)), w), 0.5)

    return _data(tensors), build


def _make_aux(rng):
    tensors = {
        "a": rng.normal(size=(2, 3)),
        "b": rng.normal(size=4),
        "c": rng.normal(size=(3, 3)),
    }

    def build(tape: Tape, lv: dict[str, Var]) -> Var:
        total = None
        for name in lv:
            term = tape.sum_sq(lv[name])
            total = term if total is None else tape.add(total, term)
        return tape.scale(total, 0.5)

    return tensors, build


LOSS_BUILDERS = {
    "perception": _make_perception,
    "memory": _make_memory,
    "pred_micro": _make_pred("micro"),
    "pred_meso": _make_pred("meso"),
    "pred_macro": _make_pred("macro"),
    "utility_td": _make_td,
    "aux": _make_aux,
}


def _tiny_trainer(rng: np.random.Generator, dual: bool = False) -> Trainer:
    pcfg = perception.PerceptionConfig(
        input_dim=_P.input_dim,
        hidden_dim=_P.hidden_dim,
        state_dim=_P.state_dim,
        dual_stream=dual,
    )
    cfg = _wcfg()
    tensors = {}
    tensors.update(perception.init_params(pcfg, rng))
    tensors.update(memory.init_params(_M, rng))
    tensors.update(world_model.init_params(cfg, rng))
    params = ParameterSet(tensors)
    # an independent target draw keeps the consistency residual away from
    # its exact zero at the tied-initialization stationary point
    return Trainer(
        params=params,
        target_mem=memory.init_params(_M, rng),
        wm_cfg=cfg,
        hyper=Hyper(gamma=0.9, beta=0.5, lam=1e-3, window=4),
        schedule=Schedule(eta0=0.05),
        state_dim=_P.state_dim,
        dual_stream=dual,
        rng=rng,
    )


def _fake_records(rng: np.random.Generator, n: int, cfg) -> list[TransitionRecord]:
    records = []
    for _ in range(n):
        x = rng.normal(size=_P.input_dim)
        x_next = rng.normal(size=_P.input_dim)
        records.append(
            TransitionRecord(
                x=Preprocessed(scales={}, vector=x),
                s=rng.normal(size=_P.state_dim),
                h_prev=rng.normal(size=_M.memory_dim),
                h=rng.normal(size=_M.memory_dim),
                action=int(rng.integers(cfg.n_actions)),
                reward=float(rng.normal()),
                x_next=Preprocessed(scales={}, vector=x_next),
                true_next=TrueScales(
                    micro=rng.normal(size=cfg.micro_dim),
                    meso_bin=int(rng.integers(cfg.meso_bins)),
                    macro=rng.normal(size=cfg.macro_dim),
                ),
                done=False,
                ds=np.zeros(2),
                ds_next=np.zeros(2),
                predicted={},
            )
        )
    return records


_GROUPS = {
    "encoder": ("perc.enc_",),
    "decoder": ("perc.dec_",),
    "memory": ("mem.",),
    "wm_pred": ("wm.pred.",),
    "wm_util": ("wm.util.",),
}

# which parameter groups each loss may touch (everything else must be
# exactly zero)
_ROUTES = {
    "perception": {"encoder", "decoder"},
    "memory": {"memory"},
    "pred": {"encoder", "memory", "wm_pred"},
    "td": {"wm_util"},
}


def _group_norm(grads, prefixes) -> float:
    total = 0.0
    for name, g in grads.items():
        if any(name.startswith(p) for p in prefixes):
            total += float(np.abs(g.data).max(initial=0.0))
    return total


def routing_checks(report: SuiteReport, seed: int = 0) -> None:
    """Exact zero blocks per loss on the real training trace."""
    rng = np.random.default_rng(seed)
    trainer = _tiny_trainer(rng)
    records = _fake_records(rng, 4, trainer.wm_cfg)
    tape, _, losses = trainer.trace(records)
    for loss_name, allowed in _ROUTES.items():
        grads = tape.backward(losses[loss_name])
        for group, prefixes in _GROUPS.items():
            norm = _group_norm(grads, prefixes)
            if group in allowed:
                report.add(
                    f"routing/{loss_name}->{group} nonzero", norm > 0.0, norm, 0.0
                )
            else:
                report.add(
                    f"routing/{loss_name}->{group} zero", norm == 0.0, norm, 0.0
                )


def gradient_suite(
    draws_per_loss: int = 20, seed: int = 0, tol: float = FD_TOL, sabotage: str | None = None
) -> SuiteReport:
    """Finite-difference checks for every loss plus routing zero blocks.

    `sabotage="kl-sign"` swaps in a wrong-adjoint negation inside the
    categorical prediction loss; the suite must then fail, proving the
    checker can see a planted sign error.
    """
    report = SuiteReport(suite="gradients")
    rng = np.random.default_rng(seed)
    builders = dict(LOSS_BUILDERS)
    if sabotage == "kl-sign":
        builders["pred_meso"] = _make_pred("meso", sabotage=True)
    elif sabotage is not None:
        raise ValueError(f"unknown sabotage {sabotage!r}")
    for name, make in builders.items():
        worst = 0.0
        for _ in range(draws_per_loss):
            params, build = make(rng)
            worst = max(worst, finite_diff_check(build, params))
        report.add(f"fd/{name}", worst <= tol, worst, tol, f"{draws_per_loss} draws")
    routing_checks(report, seed=seed)
    return report


# ------------------------------------------------------------------- pcgrad


def pcgrad_suite(trials: int = 2000, dims=(2, 10, 100), seed: int = 0) -> SuiteReport:
    report = SuiteReport(suite="pcgrad")
    rng = np.random.default_rng(seed)

    g1 = np.array([1.0, 0.0])
    g2 = np.array([-1.0, 1.0])
    out = pcgrad_flat([g1, g2], np.random.default_rng(0))
    combined = out[0] + out[1]
    exact = np.array([0.5, 1.5])
    err = float(np.max(np.abs(combined - exact)))
    report.add("worked-example", err == 0.0, err, 0.0, "g1=(1,0) g2=(-1,1)")

    a = np.array([1.0, 2.0])
    b = np.array([2.0, 1.0])
    out = pcgrad_flat([a, b], np.random.default_rng(0))
    same = np.array_equal(out[0], a) and np.array_equal(out[1], b)
    report.add("non-conflicting-identity", same, 0.0 if same else 1.0, 0.0)

    worst = np.inf
    for dim in dims:
        for _ in range(trials):
            g = [rng.normal(size=dim), rng.normal(size=dim)]
            out = pcgrad_flat(g, rng)
            worst = min(worst, float(out[0] @ g[1]), float(out[1] @ g[0]))
    report.add(
        "cross-dots",
        worst >= -1e-12,
        worst,
        -1e-12,
        f"{trials} pairs per dim {list(dims)}",
    )
    return report


# -------------------------------------------------------------------- bayes


def enumeration_posterior(prior: float, sensor: SensorModel, observed: bool) -> float:
    """Brute-force two-hypothesis table, the independent route."""
    like = {
        ("occupied", True): sensor.p_hit,
        ("occupied", False): 1.0 - sensor.p_hit,
        ("free", True): sensor.p_false,
        ("free", False): 1.0 - sensor.p_false,
    }
    joint_occ = prior * like[("occupied", observed)]
    joint_free = (1.0 - prior) * like[("free", observed)]
    return joint_occ / (joint_occ + joint_free)


_SENSORS = [
    SensorModel(0.9, 0.2),
    SensorModel(0.7, 0.3),
    SensorModel(0.99, 0.01),
    SensorModel(0.6, 0.4),
]


def bayes_suite(tol: float = 1e-12) -> SuiteReport:
    report = SuiteReport(suite="bayes")
    priors = np.round(np.arange(0.0, 1.0001, 0.01), 2)
    worst = 0.0
    for sensor in _SENSORS:
        for prior in priors:
            for observed in (True, False):
                belief = OccupancyBelief(np.full((1, 1), float(prior)))
                got = bayes_update(belief, (0, 0), observed, sensor)[0, 0]
                want = enumeration_posterior(float(prior), sensor, observed)
                worst = max(worst, abs(got - want))
    report.add(
        "enumeration-sweep",
        worst <= tol,
        worst,
        tol,
        f"{len(priors)} priors x {len(_SENSORS)} sensors x 2 readings",
    )

    belief = OccupancyBelief(np.full((1, 1), 0.5))
    got = bayes_update(belief, (0, 0), True, SensorModel(0.9, 0.2))[0, 0]
    err = abs(got - 9.0 / 11.0)
    report.add("posterior-9-11", err <= tol, err, tol, "prior .5, hit .9, false .2")
    return report


# -------------------------------------------------------------- contraction


def contraction_suite(
    n_mdps: int = 20,
    pairs: int = 200,
    gammas=(0.5, 0.9),
    seed: int = 0,
    tol: float = 1e-12,
) -> SuiteReport:
    report = SuiteReport(suite="contraction")
    rng = np.random.default_rng(seed)
    worst_excess = -np.inf
    for k in range(n_mdps):
        mdp = random_mdp(int(rng.integers(2, 21)), int(rng.integers(1, 5)), seed=seed + k)
        for gamma in gammas:
            for _ in range(pairs):
                v1 = rng.normal(size=mdp.n_states)
                v2 = rng.normal(size=mdp.n_states)
                ratio = convergence.contraction_ratio(mdp, gamma, v1, v2)
                worst_excess = max(worst_excess, ratio - gamma)
    report.add(
        "sup-norm-ratio",
        worst_excess <= tol,
        worst_excess,
        tol,
        f"{n_mdps} MDPs x {list(gammas)} x {pairs} pairs",
    )

    mdp = random_mdp(12, 3, seed=seed)
    v1 = rng.normal(size=12)
    shift_err = abs(convergence.contraction_ratio(mdp, 0.9, v1, v1 + 3.0) - 0.9)
    report.add("constant-shift-ratio", shift_err <= tol, shift_err, tol)

    gamma = 0.9
    v_star, _ = convergence.value_iteration(mdp, gamma, tol=1e-13)
    v = np.zeros(12)
    initial = float(np.max(np.abs(v - v_star)))
    geo_ok = True
    worst_geo = 0.0
    for k in range(1, 51):
        v = convergence.bellman_apply(v, mdp, gamma)
        excess = float(np.max(np.abs(v - v_star))) - gamma**k * initial
        worst_geo = max(worst_geo, excess)
        geo_ok = geo_ok and excess <= 1e-9
    report.add("geometric-decay", geo_ok, worst_geo, 1e-9, "k up to 50")

    fixed = float(np.max(np.abs(convergence.bellman_apply(v_star, mdp, gamma) - v_star)))
    report.add("fixed-point", fixed < 10 * 1e-13, fixed, 10 * 1e-13)

    exemplar, _ = convergence.value_iteration(two_state_cycle(), 0.5, tol=1e-13)
    ex_err = float(np.max(np.abs(exemplar - np.array([4.0 / 3.0, 2.0 / 3.0]))))
    report.add("two-state-exemplar", ex_err <= 1e-9, ex_err, 1e-9)
    return report


# ----------------------------------------------------------------- schedule


def schedule_suite(seed: int = 0) -> SuiteReport:
    report = SuiteReport(suite="schedule")
    expectations = {
        0.0: False,
        0.25: False,
        0.5: False,
        0.6: True,
        0.75: True,
        1.0: True,
        1.25: False,
    }
    bad = 0
    for p, want in expectations.items():
        ok, _ = validate_schedule(Schedule(eta0=0.5, p=p, t0=100.0))
        if ok != want:
            bad += 1
    report.add("validity-table", bad == 0, bad, 0.0, "divergence conditions")

    sched = Schedule(eta0=0.5, p=1.0, t0=100.0)
    etas = np.array([sched.eta(t) for t in range(0, 10000, 97)])
    monotone = bool(np.all(np.diff(etas) <= 0.0)) and bool(np.all(etas > 0.0))
    report.add("eta-positive-decreasing", monotone, 0.0 if monotone else 1.0, 0.0)

    seeds = range(3)
    decayed = convergence.rm_demo(sched, noise=0.1, seeds=seeds, steps=20000)
    constant = convergence.rm_demo(
        Schedule(eta0=0.5, p=0.0, t0=100.0), noise=0.1, seeds=seeds, steps=20000
    )
    gap = float(constant.final_distances.min() - decayed.final_distances.max())
    report.add(
        "decay-beats-constant",
        gap > 0.0,
        gap,
        0.0,
        "3 seeds, 2e4 steps, noise 0.1",
    )
    return report


SUITES = {
    "gradients": gradient_suite,
    "pcgrad": pcgrad_suite,
    "bayes": bayes_suite,
    "contraction": contraction_suite,
    "schedule": schedule_suite,
}


def run_suite(name: str, **kwargs) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choices: {sorted(SUITES)}")
    return SUITES[name](**kwargs)
