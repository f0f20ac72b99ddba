import numpy as np
import pytest

from aukai.autodiff import Tape, Tensor
from aukai.params import ParameterSet, const_vars, init_matrix, leaf_vars


def _small_set():
    return ParameterSet(
        {
            "enc.w": Tensor(np.arange(6.0).reshape(2, 3)),
            "enc.b": Tensor(np.zeros(2)),
            "mem.w": Tensor(np.ones((2, 2))),
        }
    )


def test_group_filters_by_prefix():
    ps = _small_set()
    assert sorted(ps.group("enc.")) == ["enc.b", "enc.w"]
    assert list(ps.group("mem.")) == ["mem.w"]
    assert ps.group("nope.") == {}


def test_total_size_counts_every_entry():
    assert _small_set().total_size() == 6 + 2 + 4


def test_with_updates_is_functional():
    ps = _small_set()
    ps2 = ps.with_updates({"enc.b": np.array([1.0, -1.0])})
    np.testing.assert_array_equal(ps["enc.b"].data, 0.0)
    np.testing.assert_array_equal(ps2["enc.b"].data, [1.0, -1.0])
    np.testing.assert_array_equal(ps2["enc.w"].data, ps["enc.w"].data)


def test_with_updates_rejects_unknown_name():
    with pytest.raises(KeyError):
        _small_set().with_updates({"bogus": np.zeros(2)})


def test_leaf_vars_register_gradients():
    ps = _small_set()
    tape = Tape()
    lv = leaf_vars(tape, ps)
    grads = tape.backward(tape.sum_sq(lv["enc.w"]))
    np.testing.assert_array_equal(grads["enc.w"].data, 2.0 * ps["enc.w"].data)


def test_const_vars_register_nothing():
    tape = Tape()
    cv = const_vars(tape, _small_set())
    loss = tape.sum_sq(cv["enc.w"])
    assert tape.backward(loss) == {}


def test_init_matrix_scale(rng):
    m = init_matrix(rng, 2000, 64).data
    assert m.shape == (2000, 64)
    # N(0, 1/cols): column-count scaling keeps activations O(1)
    assert abs(m.std() - 1.0 / np.sqrt(64)) < 0.005
