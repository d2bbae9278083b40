import json

import numpy as np
import pytest

from den.checkpoint import (
    CheckpointError,
    CheckpointVersionError,
    decode_array,
    encode_array,
    load_checkpoint,
    save_checkpoint,
)
from den.model import ModelConfig, build_model, fresh_bank


def _all_arrays(model):
    arrays = dict(model.shared_params())
    if model.bank is not None:
        for j, p in enumerate(model.bank.plfs):
            arrays[f"k{j}"] = p.keypoints
            arrays[f"a{j}"] = p.alpha
    return arrays


def _assert_bitwise(a, b):
    pa, pb = _all_arrays(a), _all_arrays(b)
    assert pa.keys() == pb.keys()
    for k in pa:
        assert pa[k].dtype == pb[k].dtype and pa[k].shape == pb[k].shape
        assert pa[k].tobytes() == pb[k].tobytes(), k


@pytest.fixture(params=["binary", "multiclass"])
def model(request):
    cfg = ModelConfig(mode=request.param, K=4, H=5, L=2, r=2, cap=7, policy_seed=123456789)
    m = build_model(cfg, seed=0)
    rng = np.random.default_rng(1)
    m.bank = fresh_bank(m, rng.normal(size=(20, 3)))
    for p in m.bank.plfs:
        p.alpha[:] = rng.normal(size=p.K)
    m.bank_task_id = "target-7"
    return m


class TestRoundTrip:
    def test_bitwise(self, tmp_path, model):
        save_checkpoint(model, tmp_path / "c.json")
        back = load_checkpoint(tmp_path / "c.json")
        _assert_bitwise(model, back)
        assert back.config == model.config
        assert back.config.policy_seed == 123456789
        assert back.bank_task_id == "target-7"
        np.testing.assert_array_equal(back.index_sets(5), model.index_sets(5))

    def test_no_bank(self, tmp_path):
        m = build_model(ModelConfig(use_plf=False), seed=3)
        save_checkpoint(m, tmp_path / "c.json")
        back = load_checkpoint(tmp_path / "c.json")
        assert back.bank is None and not back.config.use_plf
        _assert_bitwise(m, back)

    def test_deterministic_bytes(self, tmp_path, model):
        save_checkpoint(model, tmp_path / "a.json")
        save_checkpoint(model, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_special_values_survive(self):
        a = np.array([0.1, -0.0, 1e-310, np.finfo(float).max, np.pi])
        back = decode_array(encode_array(a))
        assert back.tobytes() == a.tobytes()

    def test_no_temp_files_left(self, tmp_path, model):
        save_checkpoint(model, tmp_path / "c.json")
        assert [p.name for p in tmp_path.iterdir()] == ["c.json"]


class TestErrors:
    def test_truncated(self, tmp_path, model):
        p = tmp_path / "c.json"
        save_checkpoint(model, p)
        p.write_text(p.read_text()[: len(p.read_text()) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_version(self, tmp_path, model):
        p = tmp_path / "c.json"
        save_checkpoint(model, p)
        obj = json.loads(p.read_text())
        obj["version"] = 2
        p.write_text(json.dumps(obj))
        with pytest.raises(CheckpointVersionError, match="version"):
            load_checkpoint(p)

    def test_shape_inconsistency(self, tmp_path, model):
        p = tmp_path / "c.json"
        save_checkpoint(model, p)
        obj = json.loads(p.read_text())
        obj["h"]["weights"][0] = encode_array(np.zeros((5, 9)))
        p.write_text(json.dumps(obj))
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_payload_length(self):
        rec = encode_array(np.zeros(4))
        rec["shape"] = [5]
        with pytest.raises(CheckpointError):
            decode_array(rec)

    def test_not_a_checkpoint(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{}")
        with pytest.raises(CheckpointError):
            load_checkpoint(p)
