import numpy as np
import pytest

from aukai import checkpoint
from aukai.autodiff import ContractError, Tensor
from aukai.params import ParameterSet


def _params(rng):
    return ParameterSet(
        {
            "perc.enc_w1": Tensor(rng.normal(size=(4, 3))),
            "perc.enc_b1": Tensor(rng.normal(size=4)),
            "wm.pred.micro.w1": Tensor(rng.normal(size=(2, 5))),
        }
    )


def _target(rng):
    return {"mem.w_update": Tensor(rng.normal(size=(3, 3)))}


def test_roundtrip_is_bitwise_exact(tmp_path, rng):
    params = _params(rng)
    target = _target(rng)
    path = tmp_path / "a.ckpt"
    checkpoint.save(path, params, target, step=123, config_hash="deadbeef")
    snap = checkpoint.load(path)
    assert snap.step == 123
    assert snap.config_hash == "deadbeef"
    live, tgt = snap.split()
    for name, tensor in params.items():
        assert live[name].data.tobytes() == tensor.data.tobytes()
    assert tgt["mem.w_update"].data.tobytes() == target["mem.w_update"].data.tobytes()


def test_save_twice_identical_bytes(tmp_path, rng):
    params = _params(rng)
    target = _target(rng)
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    checkpoint.save(p1, params, target, step=5, config_hash="x")
    checkpoint.save(p2, params, target, step=5, config_hash="x")
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOT-A-CKPT" + b"\x00" * 64)
    with pytest.raises(ContractError):
        checkpoint.load(path)


def test_truncated_file_rejected(tmp_path, rng):
    path = tmp_path / "trunc.ckpt"
    checkpoint.save(path, _params(rng), _target(rng), step=1, config_hash="h")
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(ContractError):
        checkpoint.load(path)


def test_hash_mismatch_warns_but_loads(tmp_path, rng, caplog):
    path = tmp_path / "warn.ckpt"
    checkpoint.save(path, _params(rng), _target(rng), step=1, config_hash="aaa")
    with caplog.at_level("WARNING"):
        snap = checkpoint.load(path, expected_hash="bbb")
    assert snap.config_hash == "aaa"
    assert any("hash" in rec.message for rec in caplog.records)


def test_restore_into_roundtrip(tmp_path, rng):
    params = _params(rng)
    target = _target(rng)
    path = tmp_path / "r.ckpt"
    checkpoint.save(path, params, target, step=7, config_hash="h")
    fresh = _params(np.random.default_rng(99))
    live, tgt = checkpoint.restore_into(checkpoint.load(path), fresh)
    np.testing.assert_array_equal(live["perc.enc_w1"].data, params["perc.enc_w1"].data)
    np.testing.assert_array_equal(
        tgt["mem.w_update"].data, target["mem.w_update"].data
    )


def test_restore_into_name_mismatch(tmp_path, rng):
    path = tmp_path / "n.ckpt"
    checkpoint.save(path, _params(rng), _target(rng), step=1, config_hash="h")
    other = ParameterSet({"different": Tensor(np.zeros(2))})
    with pytest.raises(ContractError):
        checkpoint.restore_into(checkpoint.load(path), other)


def test_restore_into_shape_mismatch(tmp_path, rng):
    path = tmp_path / "s.ckpt"
    params = _params(rng)
    checkpoint.save(path, params, _target(rng), step=1, config_hash="h")
    resized = ParameterSet(
        {
            "perc.enc_w1": Tensor(np.zeros((5, 3))),
            "perc.enc_b1": Tensor(np.zeros(4)),
            "wm.pred.micro.w1": Tensor(np.zeros((2, 5))),
        }
    )
    with pytest.raises(ContractError, match="shape"):
        checkpoint.restore_into(checkpoint.load(path), resized)


def test_scalar_and_empty_name_edge(tmp_path):
    # rank-0 tensor and unusual names survive the trip
    params = ParameterSet({"k": Tensor(np.array(3.5))})
    path = tmp_path / "edge.ckpt"
    checkpoint.save(path, params, {}, step=0, config_hash="")
    snap = checkpoint.load(path)
    assert snap.tensors["k"].data.item() == 3.5
