"""
Double quantization of the codebook parameters and reconstruction of layer
weights from the stored records.
"""

import logging

import numpy as np

from pylcq.classes.artifact import DQParams, QuantizedLayer
from pylcq.classes.codebook import group_weights, ungroup_weights
from pylcq.classes.config import layer_grouping
from pylcq.classes.errors import ShapeError
from pylcq.modules import quantizer
from pylcq.modules.codebook import check_zero_inclusion, derive_codebook
from pylcq.modules.initializer import ALPHA_GRID, uniform_qps

logger = logging.getLogger(__name__)


def dq_dequantize(scales, zeros, codes, bits):
    """``scale * (code - zero) / (2**bits - 1) * 2`` with per-value scale and zero."""
    levels = (1 << bits) - 1
    return np.asarray(scales, dtype=np.float64) * (codes - zeros) / levels * 2.0


def dq_encode(values, lo, hi, bits):
    """
    Quantize ``values`` over ``[lo, hi]``.

    Returns
    -------
    scale : numpy.float16
    zero : int
    codes : numpy.ndarray
    """
    levels = (1 << bits) - 1
    scale = np.float16((hi - lo) / 2.0)
    step = float(scale) * 2.0 / levels
    if step == 0.0:
        return scale, 0, np.zeros(values.shape, dtype=np.int64)
    zero = int(np.clip(np.round(-lo / step), 0, levels))
    codes = np.clip(np.round(values / step) + zero, 0, levels).astype(np.int64)
    return scale, zero, codes


def grid_search_dq(values, bits, alphas=ALPHA_GRID):
    """
    Best uniform quantization of one group over the shrunk ranges ``α·[min, max]``.

    The range always includes 0 so the zero-code is a valid code. The first α
    with the smallest squared error wins.

    Parameters
    ----------
    values : numpy.ndarray
        One group of values.
    bits : int
        Code width, 2 to 8.

    Returns
    -------
    scale, zero, codes :
        As dq_encode.
    alpha : float
        Chosen range factor.
    error : float
        Squared reconstruction error.
    """
    if not 2 <= bits <= 8:
        raise ShapeError("dq bit-width {} is outside 2..8".format(bits))
    values = np.asarray(values, dtype=np.float64)
    lo0 = min(values.min(), 0.0)
    hi0 = max(values.max(), 0.0)
    best = None
    for alpha in alphas:
        scale, zero, codes = dq_encode(values, alpha * lo0, alpha * hi0, bits)
        error = float(((values - dq_dequantize(scale, zero, codes, bits)) ** 2).sum())
        if best is None or error < best[4]:
            best = (scale, zero, codes, float(alpha), error)
    return best


def dq_values(values, bits, group):
    """
    Double-quantize a flat array in consecutive groups of ``group`` values.

    Returns
    -------
    params : DQParams
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    scales, zeros, codes, alphas = [], [], [], []
    for start in range(0, values.size, group):
        scale, zero, chunk, alpha, _ = grid_search_dq(values[start:start + group], bits)
        scales.append(scale)
        zeros.append(zero)
        codes.append(chunk)
        alphas.append(alpha)
    codes = np.concatenate(codes) if codes else np.zeros(0, dtype=np.int64)
    return DQParams(np.array(scales, dtype=np.float16), zeros, codes, bits, group, np.array(alphas))


def dq_reconstruct(params):
    """Dequantized values of a DQParams record."""
    group_index = np.arange(len(params)) // params.group
    return dq_dequantize(params.scales.astype(np.float64)[group_index], params.zeros[group_index],
                         params.codes, params.bits)


def reconstruct_codebook(layer, config):
    """
    Stored S and V of every subset of a layer.

    Returns
    -------
    S : numpy.ndarray
        ``(N_V, N_D, N_G)``.
    V : numpy.ndarray
        ``(N_V, N_D, N_Q)``.
    """
    n_v, n_g = layer.s1.shape
    S = np.empty((n_v, config.rank, n_g))
    S[:, 0, :] = layer.s1.astype(np.float64)
    V = np.empty((n_v, config.rank, config.n_q))
    for subset in range(n_v):
        S[subset, 1:, :] = dq_reconstruct(layer.s_dq[subset]).reshape(config.rank - 1, n_g)
        if config.implicit_v:
            V[subset] = uniform_qps(config.n_q)[None]
        else:
            V[subset] = dq_reconstruct(layer.v_dq[subset]).reshape(config.rank, config.n_q)
    return S, V


def reconstruct_layer(layer, config):
    """
    Dequantized (D_in, D_out) weights of a stored layer.

    Used both right after double quantization and after reading an artifact,
    so the two agree bit for bit.
    """
    S, V = reconstruct_codebook(layer, config)
    Cprime = np.matmul(np.swapaxes(S, -1, -2), V)
    sorted_prime = quantizer.sort_codebook(Cprime, config.eps).values
    B = np.take_along_axis(sorted_prime, layer.b_idx[..., None], axis=-1)
    C = Cprime - B
    sorted_c = quantizer.sort_codebook(C, config.eps).values
    return ungroup_weights(quantizer.dequantize(layer.z, sorted_c), layer.shape)


def apply_dq(params, weight, config):
    """
    Double-quantize one trained layer into its storage record.

    S₁ is rounded to float16. Higher-rank S rows are searched first at
    ``dq_bits_s``, then V at ``dq_bits_v`` (skipped when V is implicit). The
    offset becomes an index into the sorted dq codebook ``S^T V`` and the
    weight indices are recomputed against the dq codebook.

    Parameters
    ----------
    params : CodebookParams
        Trained leaves of the layer.
    weight : numpy.ndarray
        (D_in, D_out) full-precision weights.
    config : QuantConfig

    Returns
    -------
    layer : QuantizedLayer
    W_Q : numpy.ndarray
        Dequantized weights of the record.
    """
    derived = derive_codebook(params, config.eps)
    S, V, Bprime = derived["S"], derived["V"], derived["Bprime"]
    n_v, n_d, n_g = S.shape

    s1 = S[:, 0, :].astype(np.float16)
    s_dq = [dq_values(S[subset, 1:, :], config.dq_bits_s, config.dq_group) for subset in range(n_v)]
    if config.implicit_v:
        v_dq = [DQParams.empty(config.dq_bits_v, config.dq_group) for _ in range(n_v)]
    else:
        v_dq = [dq_values(V[subset], config.dq_bits_v, config.dq_group) for subset in range(n_v)]

    partial = QuantizedLayer(params.name, params.shape, s1, s_dq, v_dq, np.zeros((n_v, n_g), dtype=np.int64),
                             np.zeros((n_v, n_g, params.grouping.group_size), dtype=np.int64))
    S_dq, V_dq = reconstruct_codebook(partial, config)
    Cprime = np.matmul(np.swapaxes(S_dq, -1, -2), V_dq)
    sorted_prime = quantizer.sort_codebook(Cprime, config.eps)
    b_idx = quantizer.quantize_indices(Bprime, sorted_prime)
    B = np.take_along_axis(sorted_prime.values, b_idx, axis=-1)
    C = Cprime - B
    if config.check_zero_inclusion:
        check_zero_inclusion(C, params.name)
    z = quantizer.quantize_indices(group_weights(weight, params.grouping), quantizer.sort_codebook(C, config.eps))

    layer = QuantizedLayer(params.name, params.shape, s1, s_dq, v_dq, b_idx[..., 0], z)
    return layer, reconstruct_layer(layer, config)


def apply_dq_block(params, weights, config, prefix=""):
    """
    Double-quantize the six layers of a block.

    Returns
    -------
    layers : list
        QuantizedLayer records named ``{prefix}{layer}``.
    quantized : dict
        ``{layer: W_Q}`` deployed weights.
    """
    layers, quantized = [], {}
    for name, layer_params in params.items():
        layer, W_Q = apply_dq(layer_params, weights.layers()[name], config)
        layer.name = prefix + name
        layers.append(layer)
        quantized[name] = W_Q
    logger.info("double-quantized %d layers (S at %d bits, V at %s)", len(layers), config.dq_bits_s,
                "implicit uniform" if config.implicit_v else "{} bits".format(config.dq_bits_v))
    return layers, quantized


def check_layer_grouping(layer, config):
    """Raise ShapeError when a stored layer disagrees with the grouping of its config."""
    grouping = layer_grouping(config, layer.shape)
    if layer.s1.shape != (grouping.n_subsets, grouping.groups_per_subset):
        raise ShapeError("layer '{}' stores {} groups, its grouping needs {}".format(
            layer.name, layer.s1.shape, (grouping.n_subsets, grouping.groups_per_subset)))
