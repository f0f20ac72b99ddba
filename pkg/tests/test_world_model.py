import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aukai import world_model
from aukai.autodiff import ShapeError
from aukai.world_model import (
    MESO_LOSS_CAP,
    PredFlags,
    ScaleBelief,
    ScaleWeights,
    WorldModelConfig,
)


def _cfg(weights=None):
    return WorldModelConfig(
        memory_dim=4,
        fused_dim=7,
        n_actions=3,
        hidden_dim=5,
        micro_dim=2,
        macro_dim=3,
        meso_bins=4,
        weights=weights or ScaleWeights.normalized(0.5, 0.2, 0.3),
    )


def test_scale_weights_sum_exactly_one():
    w = ScaleWeights.normalized(1.0, 2.0, 3.0)
    assert w.micro + w.meso + w.macro == 1.0
    assert abs(w.micro - 1 / 6) < 1e-12


def test_scale_weights_reject_negative():
    with pytest.raises(ValueError):
        ScaleWeights.normalized(-0.1, 0.6, 0.5)


def test_scale_weights_reject_all_zero():
    with pytest.raises(ValueError):
        ScaleWeights.normalized(0.0, 0.0, 0.0)


def test_pred_loss_total_weighted_sum():
    # (0.5, 0.25, 0.25) . (2, 4, 8) = 1 + 1 + 2
    w = ScaleWeights.normalized(0.5, 0.25, 0.25)
    per_scale = {"micro": 2.0, "meso": 4.0, "macro": 8.0}
    assert world_model.pred_loss_total(per_scale, w) == 4.0


def test_gaussian_loss_is_half_squared_error():
    belief = ScaleBelief(scale="micro", mean=np.array([1.0, 2.0]), var=np.ones(2))
    assert world_model.pred_loss_scale("micro", belief, np.array([2.0, 4.0])) == 2.5


def test_gaussian_loss_shape_check():
    belief = ScaleBelief(scale="micro", mean=np.array([1.0, 2.0]), var=np.ones(2))
    with pytest.raises(ShapeError):
        world_model.pred_loss_scale("micro", belief, np.zeros(3))


def test_categorical_loss_and_cap():
    probs = np.array([0.7, 0.3, 0.0, 0.0])
    belief = ScaleBelief(scale="meso", probs=probs)
    assert abs(world_model.pred_loss_scale("meso", belief, 0) + np.log(0.7)) < 1e-12
    flags = PredFlags()
    assert world_model.pred_loss_scale("meso", belief, 2, flags) == MESO_LOSS_CAP
    assert flags.capped == 1


def test_categorical_loss_accepts_onehot_target():
    belief = ScaleBelief(scale="meso", probs=np.array([0.25, 0.25, 0.25, 0.25]))
    onehot = np.array([0.0, 1.0, 0.0, 0.0])
    assert abs(world_model.pred_loss_scale("meso", belief, onehot) + np.log(0.25)) < 1e-12


def test_categorical_belief_validates_distribution():
    from aukai.autodiff import ContractError

    with pytest.raises(ContractError):
        ScaleBelief(scale="meso", probs=np.array([0.5, 0.6]))


def test_kl_gaussian_matches_numerical_integration():
    # frozen from a dense trapezoid integration of p*log(p/q) per coordinate
    p = ScaleBelief(scale="micro", mean=np.array([0.5, -0.3]), var=np.array([1.0, 0.5]))
    q = ScaleBelief(scale="micro", mean=np.array([0.0, 0.2]), var=np.array([2.0, 1.0]))
    assert abs(world_model.kl_gaussian(p, q) - 0.3806471805599455) < 1e-9


def test_kl_gaussian_zero_on_identical():
    p = ScaleBelief(scale="macro", mean=np.zeros(3), var=np.ones(3))
    q = ScaleBelief(scale="macro", mean=np.zeros(3), var=np.ones(3))
    assert world_model.kl_gaussian(p, q) == 0.0


def test_kl_gaussian_rejects_categorical():
    p = ScaleBelief(scale="meso", probs=np.array([0.5, 0.5]))
    with pytest.raises(Exception):
        world_model.kl_gaussian(p, p)


def test_predict_scale_shapes(rng):
    cfg = _cfg()
    params = world_model.init_params(cfg, rng)
    h = rng.normal(size=4)
    micro = world_model.predict_scale(params, "micro", h, 1, cfg)
    assert micro.mean.shape == (2,) and micro.var.shape == (2,)
    assert np.all(micro.var > 0)
    meso = world_model.predict_scale(params, "meso", h, 0, cfg)
    assert meso.probs.shape == (4,)
    macro = world_model.predict_scale(params, "macro", h, 2, cfg)
    assert macro.mean.shape == (3,)


def test_predict_scale_rejects_unknown(rng):
    cfg = _cfg()
    params = world_model.init_params(cfg, rng)
    with pytest.raises(ShapeError):
        world_model.predict_scale(params, "giga", np.zeros(4), 0, cfg)


def test_logvar_is_clipped(rng):
    cfg = _cfg()
    params = world_model.init_params(cfg, rng)
    blown = {
        k: type(v)(v.data * 50.0) if "pred.micro" in k else v for k, v in params.items()
    }
    belief = world_model.predict_scale(blown, "micro", rng.normal(size=4) * 10, 0, cfg)
    assert np.all(belief.var <= np.exp(world_model.LOGVAR_HI) + 1e-12)
    assert np.all(belief.var >= np.exp(world_model.LOGVAR_LO) - 1e-30)


def test_utilities_row_matches_single(rng):
    cfg = _cfg()
    params = world_model.init_params(cfg, rng)
    z = rng.normal(size=7)
    grid = world_model.utilities(params, z, cfg)
    assert grid.shape == (3,)
    for a in range(3):
        assert abs(world_model.utility_total(params, z, a, cfg) - grid[a]) < 1e-12


def test_td_target_done_is_reward_only(rng):
    cfg = _cfg()
    params = world_model.init_params(cfg, rng)
    z = rng.normal(size=7)
    assert world_model.utility_td_target(0.25, True, z, params, cfg, 0.9) == 0.25


def test_td_target_bootstraps_max(rng):
    cfg = _cfg()
    params = world_model.init_params(cfg, rng)
    z = rng.normal(size=7)
    expected = -0.01 + 0.9 * np.max(world_model.utilities(params, z, cfg))
    assert abs(world_model.utility_td_target(-0.01, False, z, params, cfg, 0.9) - expected) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_meso_prediction_is_distribution(seed):
    r = np.random.default_rng(seed)
    cfg = _cfg()
    params = world_model.init_params(cfg, r)
    belief = world_model.predict_scale(params, "meso", r.normal(size=4) * 3, 0, cfg)
    assert np.all(belief.probs >= 0)
    assert abs(belief.probs.sum() - 1.0) < 1e-9
