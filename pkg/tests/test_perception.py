import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aukai import perception
from aukai.autodiff import ShapeError
from aukai.perception import PerceptionConfig, preprocess


def _cfg(dual=False):
    return PerceptionConfig(input_dim=6, hidden_dim=5, state_dim=3, dual_stream=dual)


def test_encode_matches_hand_computation(rng):
    params = perception.init_params(_cfg(), rng)
    x = rng.normal(size=6)
    w1 = params["perc.enc_w1"].data
    b1 = params["perc.enc_b1"].data
    w2 = params["perc.enc_w2"].data
    b2 = params["perc.enc_b2"].data
    expected = w2 @ np.tanh(w1 @ x + b1) + b2
    np.testing.assert_allclose(perception.encode(params, x), expected, atol=1e-12)


def test_perception_loss_is_reconstruction_error(rng):
    params = perception.init_params(_cfg(), rng)
    x = rng.normal(size=6)
    recon = perception.decode(params, perception.encode(params, x))
    expected = float((x - recon) @ (x - recon))
    assert abs(perception.perception_loss(params, x) - expected) < 1e-12


def test_dual_stream_heads_share_first_layer(rng):
    params = perception.init_params(_cfg(dual=True), rng)
    x = rng.normal(size=6)
    s_know, s_act = perception.encode_dual(params, x)
    assert s_know.shape == s_act.shape == (3,)
    # independent second layers: generically different outputs
    assert not np.allclose(s_know, s_act)
    np.testing.assert_allclose(s_know, perception.encode(params, x), atol=1e-12)


def test_dual_init_shares_base_tensors_with_single(rng):
    seed = int(rng.integers(2**31))
    single = perception.init_params(_cfg(), np.random.default_rng(seed))
    dual = perception.init_params(_cfg(dual=True), np.random.default_rng(seed))
    for name, tensor in single.items():
        np.testing.assert_array_equal(dual[name].data, tensor.data)
    assert set(dual) - set(single) == {"perc.enc_w2a", "perc.enc_b2a"}


def test_preprocess_maps_range_to_unit_interval():
    raw = {
        "micro": np.array([0.0, 0.5, 1.0]),
        "meso": np.array([0.25]),
        "macro": np.array([-2.0, 2.0]),
    }
    ranges = {
        "micro": (np.zeros(3), np.ones(3)),
        "meso": (np.zeros(1), np.ones(1)),
        "macro": (np.full(2, -2.0), np.full(2, 2.0)),
    }
    pre = preprocess(raw, ranges)
    np.testing.assert_allclose(pre.scales["micro"], [-1.0, 0.0, 1.0])
    np.testing.assert_allclose(pre.scales["meso"], [-0.5])
    np.testing.assert_allclose(pre.scales["macro"], [-1.0, 1.0])
    assert pre.clamped == 0
    np.testing.assert_array_equal(
        pre.vector, np.concatenate([pre.scales[s] for s in perception.SCALES])
    )


def test_preprocess_clamps_and_counts_outliers():
    raw = {
        "micro": np.array([2.0]),
        "meso": np.array([0.5]),
        "macro": np.array([-3.0]),
    }
    ranges = {s: (np.zeros(1), np.ones(1)) for s in ("micro", "meso", "macro")}
    pre = preprocess(raw, ranges)
    assert pre.clamped == 2
    assert pre.scales["micro"][0] == 1.0
    assert pre.scales["macro"][0] == -1.0


def test_preprocess_rejects_missing_scale():
    with pytest.raises(ShapeError):
        preprocess({"micro": np.zeros(1)}, {"micro": (np.zeros(1), np.ones(1))})


def test_preprocess_rejects_degenerate_range():
    raw = {s: np.zeros(1) for s in ("micro", "meso", "macro")}
    ranges = {s: (np.zeros(1), np.ones(1)) for s in ("micro", "meso", "macro")}
    ranges["meso"] = (np.ones(1), np.ones(1))
    with pytest.raises(ShapeError):
        preprocess(raw, ranges)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_preprocessed_values_stay_in_unit_box(seed):
    r = np.random.default_rng(seed)
    raw = {
        "micro": r.normal(size=4) * 3,
        "meso": r.normal(size=2),
        "macro": r.normal(size=3),
    }
    ranges = {
        "micro": (np.full(4, -1.0), np.ones(4)),
        "meso": (np.full(2, -1.0), np.ones(2)),
        "macro": (np.full(3, -1.0), np.ones(3)),
    }
    pre = preprocess(raw, ranges)
    assert np.all(pre.vector >= -1.0) and np.all(pre.vector <= 1.0)
