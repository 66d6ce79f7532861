"""
Tests of codebook construction, reparameterization and offset substitution.
"""

import numpy as np
import pytest

from pylcq.classes.codebook import CodebookParams, group_weights, ungroup_weights
from pylcq.classes.config import QuantConfig, layer_grouping
from pylcq.classes.errors import CodebookError, ShapeError
from pylcq.modules.codebook import (build_codebook, check_zero_inclusion, derive_codebook, invert_reparam,
                                    quantize_weight, reparam_qps, reparam_scale, substitute_offset)
from pylcq.modules.initializer import uniform_qps


def test_build_codebook_example():
    C = build_codebook(np.array([[2.0]]), np.array([[-1.0, 1.0]]), np.array([0.0]))
    np.testing.assert_array_equal(C, [[-2.0, 2.0]])


def test_rank_one_is_scaled_uniform_grid():
    S = np.array([[0.5, 2.0]])
    B = np.array([0.1, -0.3])
    C = build_codebook(S, uniform_qps(4)[None], B)
    expected = S[0][:, None] * uniform_qps(4)[None] - B[:, None]
    np.testing.assert_allclose(C, expected, rtol=0, atol=1e-15)


def test_build_codebook_shape_mismatch():
    with pytest.raises(ShapeError):
        build_codebook(np.ones((2, 3)), np.ones((1, 4)), np.zeros(3))
    with pytest.raises(ShapeError):
        build_codebook(np.ones((2, 3)), np.ones((2, 4)), np.zeros(2))


def test_substituted_offset_puts_zero_in_codebook(rng):
    S = rng.normal(size=(2, 16))
    V = rng.uniform(-1.0, 1.0, size=(2, 4))
    Bprime = rng.normal(0.0, 0.5, size=16)
    B = substitute_offset(Bprime, S, V)
    Cprime = build_codebook(S, V, np.zeros(16))
    assert np.all(np.any(Cprime == B[:, None], axis=-1))
    check_zero_inclusion(build_codebook(S, V, B))


def test_zero_inclusion_violation():
    with pytest.raises(CodebookError):
        check_zero_inclusion(np.array([[0.0, 1.0], [0.5, 1.0]]), "fc1")


def test_reparameterization_bounds(rng):
    sbar = rng.normal(0.0, 3.0, size=(2, 5))
    w_min = -rng.uniform(0.1, 1.0, size=5)
    w_max = rng.uniform(0.1, 1.0, size=5)
    S = reparam_scale(sbar, w_min, w_max)
    assert np.all(np.abs(S) < (w_max - w_min) / 2.0)
    assert np.all(np.abs(reparam_qps(rng.normal(0.0, 5.0, 10))) <= 1.0)


def test_invert_reparam_round_trip(rng):
    coefficient = rng.uniform(0.1, 2.0, size=100)
    ratio = rng.uniform(-0.999, 0.999, size=100)
    value = ratio * coefficient
    restored = np.tanh(invert_reparam(value, coefficient)) * coefficient
    np.testing.assert_allclose(restored, value, rtol=1e-10, atol=0)


def test_invert_reparam_clamps_and_handles_zero_coefficient():
    bars = invert_reparam(np.array([1.0, -2.0, 0.3]), np.array([1.0, 1.0, 0.0]))
    assert np.all(np.isfinite(bars))
    assert bars[0] > 0 and bars[1] < 0
    assert bars[2] == 0.0


def test_group_round_trip():
    weight = np.arange(24.0).reshape(4, 6)
    grouping = layer_grouping(QuantConfig(group_size=4, groups_per_subset=3), weight.shape)
    grouped = group_weights(weight, grouping)
    assert grouped.shape == (2, 3, 4)
    # First group is the first output channel
    np.testing.assert_array_equal(grouped[0, 0], weight[:, 0])
    np.testing.assert_array_equal(ungroup_weights(grouped, weight.shape), weight)


def random_params(rng, weight, config):
    params = CodebookParams.zeros("layer", weight, config)
    return params.with_leaves(sbar=rng.normal(size=params.sbar.shape), vbar=rng.normal(size=params.vbar.shape),
                              bbar=rng.normal(0.0, 0.3, size=params.bbar.shape))


def test_derived_codebook_contains_zero(rng):
    config = QuantConfig(group_size=8, rank=2, groups_per_subset=4)
    weight = rng.normal(0.0, 0.05, size=(16, 8))
    derived = derive_codebook(random_params(rng, weight, config))
    assert derived["C"].shape == (4, 4, 4)
    check_zero_inclusion(derived["C"])
    assert np.all(np.abs(derived["S"]) <= np.abs(weight.max() - weight.min()))


def test_quantized_weights_are_codewords(rng):
    config = QuantConfig(group_size=8, rank=2, groups_per_subset=4)
    weight = rng.normal(0.0, 0.05, size=(16, 8))
    params = random_params(rng, weight, config)
    W_Q = quantize_weight(params, weight)
    assert W_Q.shape == weight.shape
    C = derive_codebook(params)["C"]
    grouped = group_weights(W_Q, params.grouping)
    assert np.all(np.any(grouped[..., None] == C[..., None, :], axis=-1))


def test_constant_group_quantizes_to_zero(rng):
    config = QuantConfig(group_size=8, rank=2, groups_per_subset=2)
    weight = rng.normal(0.0, 0.05, size=(8, 2))
    weight[:, 0] = 0.25
    params = random_params(rng, weight, config)
    assert params.coefficient[0, 0] == 0.0
    W_Q = quantize_weight(params, weight)
    np.testing.assert_array_equal(W_Q[:, 0], np.zeros(8))


def test_params_reject_bad_leaf_shapes(rng):
    config = QuantConfig(group_size=8, rank=2, groups_per_subset=2)
    params = CodebookParams.zeros("layer", rng.normal(size=(8, 2)), config)
    with pytest.raises(ShapeError):
        params.with_leaves(bbar=np.zeros((1, 3, 1)))


@pytest.mark.parametrize("rank", [1, 2, 3])
def test_codebook_rank_is_bounded(rng, rank):
    config = QuantConfig(bits=3, group_size=8, rank=rank, groups_per_subset=8)
    weight = rng.normal(0.0, 0.02, size=(8, 16))
    params = CodebookParams.zeros("fc1", weight, config).with_leaves(
        sbar=rng.normal(size=(2, rank, 8)), vbar=rng.normal(size=(2, rank, 8)), bbar=rng.normal(size=(2, 8, 1)))
    for C in derive_codebook(params)["C"]:
        assert C.shape == (8, 8)
        assert np.linalg.matrix_rank(C) <= rank + 1
