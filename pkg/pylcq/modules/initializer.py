"""
Starting values of the codebook parameters: a per-group clip search for the
rank-1 scale and offset, fixed quantization point sets, and the inversion of
everything into bar space.
"""

import logging

import numpy as np
from scipy.stats import norm

from pylcq.classes.block import LAYERS
from pylcq.classes.codebook import CodebookParams, group_weights
from pylcq.classes.config import layer_grouping
from pylcq.classes.errors import ConfigError
from pylcq.modules.codebook import invert_reparam

logger = logging.getLogger(__name__)

# Shrink factors tried by the clip search, 1.00 down to 0.30
ALPHA_GRID = np.arange(100, 29, -1) / 100.0
# Half-width of the uniform draws for random QPS rows
RAND_QPS_RANGE = 0.1


def uniform_quantize(W, lo, hi, bits):
    """
    Asymmetric uniform quantization with an integer zero-point.

    ``2**bits`` levels spaced ``(hi - lo) / (2**bits - 1)`` apart, shifted so
    that 0 is a level. Rounds half to even. Where ``hi == lo`` the weights are
    returned unchanged.

    Parameters
    ----------
    W : numpy.ndarray
        ``(..., G)`` weights.
    lo, hi : numpy.ndarray
        ``(...)`` range of each group.
    bits : int
        Bit-width.
    """
    levels = (1 << bits) - 1
    span = (hi - lo)[..., None]
    flat = span == 0
    step = np.where(flat, 1.0, span / levels)
    zero = np.clip(np.round(-lo[..., None] / step), 0, levels)
    codes = np.clip(np.round(W / step) + zero, 0, levels)
    return np.where(flat, W, (codes - zero) * step)


def clip_search(W, bits, alphas=ALPHA_GRID):
    """
    Grid search of the clipping range of every group.

    For each shrink factor α the group is clipped to
    ``[mid - α·half, mid + α·half]`` and quantized with uniform_quantize; the
    first α with the smallest squared error wins.

    Parameters
    ----------
    W : numpy.ndarray
        ``(..., G)`` grouped weights.
    bits : int
        Bit-width of the quantizer.

    Returns
    -------
    scale : numpy.ndarray
        ``α·half`` per group (the rank-1 scaling entry S₁).
    offset : numpy.ndarray
        ``-mid`` per group (B′).
    alpha : numpy.ndarray
        Chosen shrink factor per group.
    mse : numpy.ndarray
        Squared error of the chosen α per group.
    """
    W = np.asarray(W, dtype=np.float64)
    w_max = W.max(axis=-1)
    w_min = W.min(axis=-1)
    mid = (w_max + w_min) / 2.0
    half = (w_max - w_min) / 2.0

    errors = np.empty((len(alphas),) + mid.shape)
    for index, alpha in enumerate(alphas):
        errors[index] = group_error(W, mid, alpha * half, bits)
    best = np.argmin(errors, axis=0)
    alpha = np.asarray(alphas)[best]
    mse = np.take_along_axis(errors, best[None], axis=0)[0]
    return alpha * half, -mid, alpha, mse


def group_error(W, mid, radius, bits):
    """Squared error of every group quantized over ``[mid - radius, mid + radius]``."""
    lo = mid - radius
    hi = mid + radius
    Q = uniform_quantize(np.clip(W, lo[..., None], hi[..., None]), lo, hi, bits)
    return ((W - Q) ** 2).sum(axis=-1)


def clip_search_init(W_group, bits):
    """
    Rank-1 scale and offset of one group.

    Returns
    -------
    scale : float
        S₁ entry, ``α·half``; 0 for a constant group.
    offset : float
        B′ entry, ``-mid``; ``-c`` for a group of constant value c.

    Example:

    >>> clip_search_init(np.full(8, 0.25), 2)
    (0.0, -0.25)
    """
    W_group = np.asarray(W_group, dtype=np.float64).reshape(1, -1)
    if W_group.size == 0:
        raise ConfigError("cannot search the clipping range of an empty group")
    scale, offset, _, _ = clip_search(W_group, bits)
    return float(scale[0]), float(offset[0])


def uniform_qps(n_q):
    """``-1 + 2k / (N_Q - 1)`` for k = 0 .. N_Q - 1."""
    k = np.arange(n_q, dtype=np.float64)
    return 2.0 * k / (n_q - 1) - 1.0


def second_qps(n_q, v2_init, rng):
    """
    Initial second QPS row.

    ``normal``: Gaussian quantiles at ``(k - 0.5) / N_Q`` divided by their
    largest magnitude. ``uniform``: quantiles of Uniform(-1, 1) at the same
    probabilities. ``rand``: sorted draws from Uniform(-0.1, 0.1).
    """
    probs = (np.arange(1, n_q + 1) - 0.5) / n_q
    if v2_init == "normal":
        quantiles = norm.ppf(probs)
        return quantiles / np.abs(quantiles).max()
    if v2_init == "uniform":
        return 2.0 * probs - 1.0
    if v2_init == "rand":
        return random_qps(n_q, rng)
    raise ConfigError("unknown v2_init '{}'".format(v2_init))


def random_qps(n_q, rng):
    return np.sort(rng.uniform(-RAND_QPS_RANGE, RAND_QPS_RANGE, n_q))


def initial_qps(config, rng):
    """``(N_D, N_Q)`` starting QPS matrix."""
    rows = [uniform_qps(config.n_q)]
    if config.rank >= 2:
        rows.append(second_qps(config.n_q, config.v2_init, rng))
    for _ in range(3, config.rank + 1):
        rows.append(random_qps(config.n_q, rng))
    return np.stack(rows)


def init_params(name, weight, config, rng):
    """
    Bar-space codebook parameters of one layer.

    Parameters
    ----------
    name : str
        Layer name stored on the parameters.
    weight : numpy.ndarray
        (D_in, D_out) full-precision weights.
    config : QuantConfig
        Bit-width, rank, grouping and v2_init are used.
    rng : numpy.random.Generator
        Source of the random QPS rows.

    Returns
    -------
    params : CodebookParams
    """
    grouping = layer_grouping(config, weight.shape)
    grouped = group_weights(weight, grouping)
    params = CodebookParams.zeros(name, weight, config)
    coefficient = params.coefficient

    scale, offset, alpha, _ = clip_search(grouped, config.bits)
    qps = initial_qps(config, rng)

    params.sbar[:, 0, :] = invert_reparam(scale, coefficient)
    params.bbar[:, :, 0] = invert_reparam(offset, coefficient)
    params.vbar[:] = invert_reparam(qps, 1.0)[None]
    logger.debug("initialized %s: %d subsets, mean clip factor %.3f", name, grouping.n_subsets, alpha.mean())
    return params


def init_block(weights, config, rng):
    """Initial CodebookParams of the six layers of a block, keyed by layer name."""
    return {layer: init_params(layer, weights.layers()[layer], config, rng) for layer in LAYERS}
