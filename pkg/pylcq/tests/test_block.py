"""
Tests of the toy transformer block, the synthetic model and LCQT files.
"""

import numpy as np
import pytest

from pylcq.classes.block import LAYERS, BlockWeights, CalibrationSet
from pylcq.classes.errors import ShapeError, TensorFileError
from pylcq.modules import tensor_io
from pylcq.modules.block import (block_forward, gen_calibration, head_masks, load_calibration, load_model,
                                 save_calibration, save_model)


def test_gen_calibration_shapes(tiny_model):
    calib, stack = tiny_model
    assert calib.inputs.shape == (4, 4, 8)
    assert len(calib) == 4 and calib.seq_len == 4 and calib.dim == 8
    assert len(stack) == 2
    weights = stack[0]
    assert weights.fc1.shape == (8, 16)
    assert weights.fc2.shape == (16, 8)
    assert weights.heads == 2
    np.testing.assert_array_equal(calib.fp, calib.inputs)
    np.testing.assert_array_equal(calib.tilde, calib.inputs)


def test_gen_calibration_is_deterministic():
    calib_a, stack_a = gen_calibration(seed=3, samples=2, seq_len=3, dim=4, ff_dim=8, heads=2, blocks=1)
    calib_b, stack_b = gen_calibration(seed=3, samples=2, seq_len=3, dim=4, ff_dim=8, heads=2, blocks=1)
    calib_c, _ = gen_calibration(seed=4, samples=2, seq_len=3, dim=4, ff_dim=8, heads=2, blocks=1)
    np.testing.assert_array_equal(calib_a.inputs, calib_b.inputs)
    for name in LAYERS:
        np.testing.assert_array_equal(getattr(stack_a[0], name), getattr(stack_b[0], name))
    assert not np.array_equal(calib_a.inputs, calib_c.inputs)


def test_block_forward(tiny_model):
    calib, stack = tiny_model
    out = block_forward(calib.inputs, stack[0])
    assert out.shape == calib.inputs.shape
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out[1], block_forward(calib.inputs[1], stack[0]))


def test_zero_layers_make_identity(tiny_model):
    calib, stack = tiny_model
    zeros = {name: np.zeros_like(matrix) for name, matrix in stack[0].layers().items()}
    out = block_forward(calib.inputs, stack[0].with_layers(zeros))
    np.testing.assert_allclose(out, calib.inputs, rtol=0, atol=1e-15)


def test_head_masks():
    masks = head_masks(6, 3)
    assert masks.shape == (3, 1, 6)
    np.testing.assert_array_equal(masks.sum(axis=0), np.ones((1, 6)))
    np.testing.assert_array_equal(masks[1, 0], [0, 0, 1, 1, 0, 0])


def test_block_weight_checks(tiny_model):
    _, stack = tiny_model
    arrays = {**stack[0].layers(), **stack[0].norms()}
    with pytest.raises(ShapeError):
        BlockWeights.from_dict(arrays, heads=3)
    bad = dict(arrays, fc2=np.zeros((8, 8)))
    with pytest.raises(ShapeError):
        BlockWeights.from_dict(bad, heads=2)
    nan = dict(arrays, qproj=np.full((8, 8), np.nan))
    with pytest.raises(ValueError):
        BlockWeights.from_dict(nan, heads=2)


def test_calibration_shape_check():
    with pytest.raises(ShapeError):
        CalibrationSet(np.zeros((4, 8)))
    with pytest.raises(ShapeError):
        CalibrationSet(np.zeros((2, 3, 4)), fp=np.zeros((2, 3, 5)))


def test_model_round_trip(tmpdir, tiny_model):
    calib, stack = tiny_model
    model_path, calib_path = str(tmpdir.join("model.lcqt")), str(tmpdir.join("calib.lcqt"))
    save_model(model_path, stack)
    save_calibration(calib_path, calib)
    loaded = load_model(model_path)
    assert len(loaded) == 2
    assert loaded[1].heads == 2
    for name in LAYERS:
        np.testing.assert_array_equal(getattr(loaded[1], name), getattr(stack[1], name))
    np.testing.assert_array_equal(load_calibration(calib_path).inputs, calib.inputs)


def test_tensor_container_dtypes():
    tensors = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5], dtype=np.float16),
               "c": np.arange(4, dtype=np.uint8), "scalar": np.float32(2.0)}
    loaded = tensor_io.tensors_from_bytes(tensor_io.tensors_to_bytes(tensors))
    assert list(loaded) == list(tensors)
    for name, array in tensors.items():
        assert loaded[name].dtype == np.asarray(array).dtype
        np.testing.assert_array_equal(loaded[name], array)


def test_tensor_container_errors():
    data = tensor_io.tensors_to_bytes({"x": np.ones(3)})
    with pytest.raises(TensorFileError) as info:
        tensor_io.tensors_from_bytes(b"XXXX" + data[4:])
    assert info.value.offset == 0
    with pytest.raises(TensorFileError):
        tensor_io.tensors_from_bytes(data[:-1])
    with pytest.raises(TensorFileError):
        tensor_io.tensors_from_bytes(data + b"\x00")
    with pytest.raises(TensorFileError):
        tensor_io.tensors_to_bytes({"x": np.ones(3, dtype=np.int64)})


def test_missing_files(tmpdir):
    with pytest.raises(FileNotFoundError):
        load_model(str(tmpdir.join("absent.lcqt")))
    path = str(tmpdir.join("calib.lcqt"))
    tensor_io.write_tensors(path, {"other": np.ones(1)})
    with pytest.raises(TensorFileError):
        load_calibration(path)
