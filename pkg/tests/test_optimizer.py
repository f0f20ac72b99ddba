import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aukai.autodiff import ContractError, Tensor
from aukai.optimizer import (
    Hyper,
    LossBreakdown,
    Schedule,
    discounted_objective,
    l2_penalty,
    pcgrad,
    pcgrad_flat,
    sgd_step,
    step_loss,
    sum_gradients,
    validate_schedule,
)
from aukai.params import ParameterSet


def test_schedule_values():
    s = Schedule(eta0=0.1, p=1.0, t0=100.0)
    assert s.eta(0) == 0.1
    assert abs(s.eta(100) - 0.05) < 1e-15
    assert s.eta(300) == pytest.approx(0.025)


def test_schedule_monotone_positive():
    s = Schedule(eta0=0.2, p=0.75, t0=500.0)
    last = np.inf
    for t in range(0, 100_000, 997):
        eta = s.eta(t)
        assert 0.0 < eta <= last
        last = eta


def test_schedule_validation_table():
    # divergent sum + convergent square sum <=> p in (0.5, 1]
    cases = {0.0: False, 0.25: False, 0.5: False, 0.6: True, 0.75: True, 1.0: True, 1.25: False}
    for p, expect in cases.items():
        ok, _ = validate_schedule(Schedule(eta0=0.1, p=p, t0=10.0))
        assert ok is expect, f"p={p}"


def test_schedule_rejects_bad_params():
    with pytest.raises(ValueError):
        Schedule(eta0=0.0)
    with pytest.raises(ValueError):
        Schedule(eta0=0.1, t0=0.0)


def test_hyper_validation():
    with pytest.raises(ValueError):
        Hyper(gamma=1.0)
    with pytest.raises(ValueError):
        Hyper(beta=-0.1)
    with pytest.raises(ValueError):
        Hyper(window=0)


def test_step_loss_composition():
    b = LossBreakdown(
        step=0, l_perception=1.0, l_memory=0.5, l_pred=1.0, utility=1.0, l_aux=0.0
    )
    assert step_loss(b, beta=0.5) == 2.0


def test_breakdown_rejects_non_finite():
    with pytest.raises(ContractError):
        LossBreakdown(
            step=0, l_perception=np.inf, l_memory=0.0, l_pred=0.0, utility=0.0, l_aux=0.0
        )


def test_discounted_objective_hand_case():
    mk = lambda v: LossBreakdown(
        step=0, l_perception=v, l_memory=0.0, l_pred=0.0, utility=0.0, l_aux=0.0
    )
    # 1 + 0.5*2 + 0.25*4 = 3
    total = discounted_objective([mk(1.0), mk(2.0), mk(4.0)], gamma=0.5, beta=0.0)
    assert total == 3.0


def test_l2_penalty():
    ps = ParameterSet({"w": Tensor(np.array([3.0, 4.0]))})
    assert l2_penalty(ps, 0.1) == pytest.approx(2.5)
    with pytest.raises(ContractError):
        l2_penalty(ps, -0.1)


def test_pcgrad_worked_example_exact():
    g1 = np.array([1.0, 0.0])
    g2 = np.array([-1.0, 1.0])
    rng = np.random.default_rng(0)
    proj = pcgrad_flat([g1, g2], rng)
    # g1 projected off g2: (1,0) - (-1/2)(-1,1) = (0.5, 0.5)
    np.testing.assert_array_equal(proj[0], [0.5, 0.5])
    # g2 projected off g1: (-1,1) - (-1)(1,0) = (0, 1)
    np.testing.assert_array_equal(proj[1], [0.0, 1.0])
    combined = pcgrad([{"w": Tensor(g1)}, {"w": Tensor(g2)}], np.random.default_rng(0))
    np.testing.assert_array_equal(combined["w"].data, [0.5, 1.5])


def test_pcgrad_non_conflicting_unchanged():
    g1 = np.array([1.0, 0.0])
    g2 = np.array([0.3, 0.4])
    proj = pcgrad_flat([g1, g2], np.random.default_rng(0))
    np.testing.assert_array_equal(proj[0], g1)
    np.testing.assert_array_equal(proj[1], g2)


def test_pcgrad_zero_gradient_is_skipped():
    g1 = np.zeros(3)
    g2 = np.array([1.0, -2.0, 0.5])
    proj = pcgrad_flat([g1, g2], np.random.default_rng(0))
    np.testing.assert_array_equal(proj[0], 0.0)
    np.testing.assert_array_equal(proj[1], g2)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.sampled_from([2, 5, 30]))
def test_pcgrad_pairwise_cross_dots_non_negative(seed, dim):
    r = np.random.default_rng(seed)
    flats = [r.normal(size=dim) for _ in range(2)]
    proj = pcgrad_flat(flats, r)
    assert float(proj[0] @ flats[1]) >= -1e-12
    assert float(proj[1] @ flats[0]) >= -1e-12


def test_pcgrad_requires_matching_keys():
    with pytest.raises(ContractError):
        pcgrad(
            [{"a": Tensor(np.ones(2))}, {"b": Tensor(np.ones(2))}],
            np.random.default_rng(0),
        )
    with pytest.raises(ContractError):
        pcgrad([], np.random.default_rng(0))


def test_sum_gradients():
    maps = [{"w": Tensor(np.array([1.0, 2.0]))}, {"w": np.array([0.5, -1.0])}]
    out = sum_gradients(maps)
    np.testing.assert_array_equal(out["w"].data, [1.5, 1.0])


def test_sgd_step_moves_against_gradient():
    ps = ParameterSet({"w": Tensor(np.array([1.0, 1.0]))})
    stepped = sgd_step(ps, {"w": np.array([0.5, -0.5])}, eta=0.1)
    np.testing.assert_allclose(stepped["w"].data, [0.95, 1.05])
    with pytest.raises(ContractError):
        sgd_step(ps, {"w": np.zeros(2)}, eta=-0.1)
