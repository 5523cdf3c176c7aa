"""Checkpoint persistence: layout, fidelity, and byte stability."""

import json

import numpy as np
import pytest

from scast.checkpoint import INDEX_NAME, load_checkpoint, save_checkpoint
from scast.model import allocate_sub_head, init_params
from scast.rng import stream


def _params(with_sub=False, iteration=0):
    params = init_params(4, 6, stream(0, "ckpt"))
    if with_sub:
        allocate_sub_head(params, 5, stream(0, "ckpt-sub"))
    params.iteration = iteration
    return params


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_round_trip_preserves_structure(tmp_path):
    params = _params(with_sub=True, iteration=42)
    save_checkpoint(tmp_path, params)
    loaded = load_checkpoint(tmp_path)
    assert loaded.iteration == 42
    assert loaded.d_in == 4 and loaded.d_h == 6 and loaded.k_sub == 5
    for (name, orig), (name2, back) in zip(params.param_items(),
                                           loaded.param_items()):
        assert name == name2
        np.testing.assert_array_equal(back, orig.astype(np.float32))


def test_round_trip_preserves_velocity(tmp_path):
    params = _params()
    for name in params.velocity:
        params.velocity[name] += 0.25
    save_checkpoint(tmp_path, params)
    loaded = load_checkpoint(tmp_path)
    for name, v in params.velocity.items():
        np.testing.assert_array_equal(loaded.velocity[name], v.astype(np.float32))


def test_checkpoint_without_sub_head(tmp_path):
    save_checkpoint(tmp_path, _params(with_sub=False))
    loaded = load_checkpoint(tmp_path)
    assert loaded.k_sub is None


def test_saving_twice_is_byte_identical(tmp_path):
    params = _params(with_sub=True)
    a = tmp_path / "a"
    b = tmp_path / "b"
    save_checkpoint(a, params)
    save_checkpoint(b, params)
    assert _tree_bytes(a) == _tree_bytes(b)


def test_save_load_save_is_a_fixed_point(tmp_path):
    # float32 storage over float64 math: one save rounds, after that the
    # bytes are stable forever
    first = tmp_path / "first"
    second = tmp_path / "second"
    save_checkpoint(first, _params(with_sub=True))
    save_checkpoint(second, load_checkpoint(first))
    assert _tree_bytes(first) == _tree_bytes(second)


def test_tensors_are_stored_float32(tmp_path):
    from scast.tensorio import read_tensor

    save_checkpoint(tmp_path, _params())
    assert read_tensor(tmp_path / "w1.scst").dtype == np.float32


def test_index_is_json_with_expected_fields(tmp_path):
    save_checkpoint(tmp_path, _params(with_sub=True, iteration=7))
    index = json.loads((tmp_path / INDEX_NAME).read_text())
    assert index["format"] == 1
    assert index["iteration"] == 7
    assert set(index["arrays"]) == {"w1", "b1", "w_bi", "b_bi", "w_sub", "b_sub"}
    assert set(index["velocity"]) == set(index["arrays"])
    assert index["velocity"]["w1"] == "v_w1.scst"


def test_unknown_format_rejected(tmp_path):
    save_checkpoint(tmp_path, _params())
    index_path = tmp_path / INDEX_NAME
    index = json.loads(index_path.read_text())
    index["format"] = 99
    index_path.write_text(json.dumps(index))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path)


def test_missing_directory_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "absent")


def test_loaded_params_train_identically(tmp_path):
    from scast.model import LOSS_BCE, LossWeights, OptimConfig, train_source
    from scast.synthgen import DomainSample
    from scast.types import LabelMask, PixelGrid

    rng = np.random.default_rng(3)
    samples = [DomainSample(
        grid=PixelGrid(rng.normal(size=(4, 4, 4)).astype(np.float32)),
        biclass=LabelMask(rng.integers(0, 2, size=(4, 4)).astype(np.int32),
                          num_classes=2),
        true_subpop=LabelMask(np.zeros((4, 4), dtype=np.int32), num_classes=2),
    ) for _ in range(4)]
    save_checkpoint(tmp_path, _params())

    def resume():
        params = load_checkpoint(tmp_path)
        optim = OptimConfig(1e-3, 0.9, 5e-4, 0.9, max_iter=10)
        params, trace = train_source(params, samples, None, LossWeights(),
                                     optim, kind=LOSS_BCE, epochs=5,
                                     batch_size=4, rng=stream(9, "resume"))
        return params, trace

    a, trace_a = resume()
    b, trace_b = resume()
    assert trace_a == trace_b
    for (_, arr_a), (_, arr_b) in zip(a.param_items(), b.param_items()):
        np.testing.assert_array_equal(arr_a, arr_b)
