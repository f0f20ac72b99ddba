import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aukai import memory
from aukai.autodiff import ContractError, Tensor
from aukai.memory import MemoryConfig

CFG = MemoryConfig(state_dim=3, memory_dim=4)


def test_memory_step_matches_hand_computation(rng):
    params = memory.init_params(CFG, rng)
    s = rng.normal(size=3)
    h = rng.normal(size=4)
    joint = np.concatenate([s, h])
    u = 1.0 / (1.0 + np.exp(-(params["mem.w_update"].data @ joint + params["mem.b_update"].data)))
    c = np.tanh(params["mem.w_cand"].data @ joint + params["mem.b_cand"].data)
    expected = (1.0 - u) * h + u * c
    np.testing.assert_allclose(memory.memory_step(params, s, h), expected, atol=1e-12)


def test_init_state_is_zero():
    np.testing.assert_array_equal(memory.init_state(CFG), np.zeros(4))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_state_stays_in_open_unit_box(seed):
    # convex blend of h in (-1,1) and tanh candidate stays in (-1,1)
    r = np.random.default_rng(seed)
    params = memory.init_params(CFG, r)
    h = memory.init_state(CFG)
    for _ in range(20):
        h = memory.memory_step(params, r.normal(size=3) * 2.0, h)
        assert np.all(np.abs(h) < 1.0)


def test_memory_loss_zero_when_target_is_identical(rng):
    params = memory.init_params(CFG, rng)
    target = {k: Tensor(v.data.copy()) for k, v in params.items()}
    s, h = rng.normal(size=3), rng.normal(size=4)
    assert memory.memory_loss(params, target, s, h) == 0.0


def test_memory_loss_is_squared_distance(rng):
    params = memory.init_params(CFG, rng)
    target = memory.init_params(CFG, np.random.default_rng(123))
    s, h = rng.normal(size=3), rng.normal(size=4)
    diff = memory.memory_step(params, s, h) - memory.target_step(target, s, h)
    assert abs(memory.memory_loss(params, target, s, h) - float(diff @ diff)) < 1e-12


def test_polyak_two_steps_frozen_value():
    # tau=0.01 from zero toward a constant 1.0: 0.01, then 0.01 + 0.99*0.01
    target = {"mem.w_update": Tensor(np.zeros((1, 1)))}
    live = {"mem.w_update": Tensor(np.ones((1, 1)))}
    stepped = memory.update_target(target, live, tau=0.01)
    stepped = memory.update_target(stepped, live, tau=0.01)
    assert abs(stepped["mem.w_update"].data[0, 0] - 0.0199) < 1e-15


def test_polyak_tau_bounds():
    target = {"mem.b_update": Tensor(np.zeros(2))}
    with pytest.raises(ContractError):
        memory.update_target(target, target, tau=1.5)


def test_polyak_shape_mismatch():
    target = {"mem.b_update": Tensor(np.zeros(2))}
    live = {"mem.b_update": Tensor(np.zeros(3))}
    with pytest.raises(ContractError):
        memory.update_target(target, live, tau=0.5)
