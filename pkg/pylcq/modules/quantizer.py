"""
Codebook quantization: the segmented (differentiable) form, index extraction,
the straight-through gradient node, and an exhaustive nearest-codeword oracle.

Arrays follow one layout throughout: weights ``W`` are ``(..., N_G, G)`` and
codebooks ``C`` are ``(..., N_G, N_Q)``, one codebook row per group.
"""

import numpy as np

from pylcq.classes.errors import QuantizerError
from pylcq.modules import ops

# Lower bound on segment widths used for normalization
EPS = 1e-6


class SortedCodebook:
    """
    Codebook rows sorted ascending.

    Attributes
    ----------
    values : numpy.ndarray
        ``(..., N_G, N_Q)`` sorted codewords, unmodified.
    perm : numpy.ndarray
        Sorted position -> original column, per row.
    widths : numpy.ndarray
        ``(..., N_G, N_Q - 1)`` consecutive gaps clamped to at least ``eps``.
    """

    def __init__(self, values, perm, widths, eps=EPS):
        self.values = values
        self.perm = perm
        self.widths = widths
        self.eps = eps

    @property
    def n_q(self):
        return self.values.shape[-1]

    def validate(self):
        """Raise QuantizerError unless rows are sorted with widths >= eps."""
        if self.values.shape[-1] < 1:
            raise QuantizerError("empty codebook")
        if np.any(np.diff(self.values, axis=-1) < 0):
            raise QuantizerError("codebook rows are not sorted ascending")
        if np.any(self.widths < self.eps):
            raise QuantizerError("segment widths below eps={}".format(self.eps))


def sort_codebook(C, eps=EPS):
    """
    Sort each codebook row and clamp its gaps.

    Parameters
    ----------
    C : numpy.ndarray
        ``(..., N_G, N_Q)`` codebook.
    eps : float
        Minimum segment width.

    Returns
    -------
    codebook : SortedCodebook
    """
    C = np.asarray(C, dtype=np.float64)
    if C.shape[-1] < 1:
        raise QuantizerError("empty codebook")
    perm = np.argsort(C, axis=-1, kind="stable")
    values = np.take_along_axis(C, perm, axis=-1)
    widths = np.maximum(np.diff(values, axis=-1), eps)
    return SortedCodebook(values, perm, widths, eps)


def segment_positions(W, values, widths):
    """Normalized position of every weight inside every segment, ``(..., N_G, G, N_Q - 1)``."""
    return (W[..., None] - values[..., None, :-1]) / widths[..., None, :]


def step_decisions(x):
    """
    Rounding step of every segment term.

    Fires above the midpoint. At exactly 0.5 it fires only for odd 1-based
    segments, which sends midpoints to the even sorted position.
    """
    odd = (np.arange(x.shape[-1]) % 2) == 0
    return (x > 0.5) | ((x == 0.5) & odd)


def quantize_indices(W, codebook):
    """
    Sorted-codebook position of every quantized weight.

    Parameters
    ----------
    W : numpy.ndarray
        ``(..., N_G, G)`` weights.
    codebook : SortedCodebook
        Matching ``(..., N_G, N_Q)`` sorted rows.

    Returns
    -------
    Z : numpy.ndarray
        int64 indices in ``[0, N_Q - 1]``.
    """
    codebook.validate()
    W = np.asarray(W, dtype=np.float64)
    x = segment_positions(W, codebook.values, codebook.widths)
    return step_decisions(x).sum(axis=-1).astype(np.int64)


def dequantize(Z, values):
    """Codeword of every index: ``values[..., i, Z[..., i, j]]``."""
    return np.take_along_axis(values, Z, axis=-1)


def quantize_segmented(W, codebook):
    """
    Quantize weights with the segmented rounding rule.

    Returns the codeword the telescoped segment sum selects, so the output is
    always an exact element of the codebook row.

    Example:

    >>> cb = sort_codebook(np.array([[-1.0, -1 / 3, 1 / 3, 1.0]]))
    >>> quantize_segmented(np.array([[0.7]]), cb)
    array([[1.]])
    """
    return dequantize(quantize_indices(W, codebook), codebook.values)


def oracle_quantize(W, C):
    """
    Exhaustive nearest-codeword scan.

    Among codewords at the minimal absolute distance the one at an odd 0-based
    (even 1-based) sorted position wins; otherwise the first.

    Parameters
    ----------
    W : array_like
        ``(..., N_G, G)`` weights, or a scalar with a 1-D codebook row.
    C : array_like
        ``(..., N_G, N_Q)`` codebook in any column order.

    Returns
    -------
    values : numpy.ndarray
        Quantized weights.
    Z : numpy.ndarray
        Sorted positions of the chosen codewords.
    """
    W = np.asarray(W, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if C.size == 0 or C.shape[-1] == 0:
        raise QuantizerError("empty codebook")
    scalar = W.ndim == 0
    if scalar:
        W = W.reshape(1, 1)
        C = C.reshape(1, -1)
    values = np.sort(C, axis=-1, kind="stable")
    dist = np.abs(W[..., None] - values[..., None, :])
    best = dist.min(axis=-1, keepdims=True)
    odd = (np.arange(values.shape[-1]) % 2) == 1
    score = np.where(dist == best, np.where(odd, 0, 1), 2)
    Z = np.argmin(score, axis=-1)
    out = dequantize(Z, values)
    if scalar:
        return out[0, 0], Z[0, 0]
    return out, Z


def _to_layer(grouped, layer_shape):
    # (N_V, N_G, G) groups back to the (D_in, D_out) matrix
    if layer_shape is None:
        return grouped
    rows, cols = layer_shape
    return np.ascontiguousarray(grouped.reshape(cols, rows).T)


def _from_layer(matrix, grouped_shape, layer_shape):
    if layer_shape is None:
        return matrix
    return matrix.T.reshape(grouped_shape)


def _quantize_forward(values, attrs, ctx, frozen):
    W, C = values
    if W.shape[:-1] != C.shape[:-1]:
        raise QuantizerError("weights {} and codebook {} disagree on groups".format(W.shape, C.shape))
    if frozen:
        grouped = _frozen_forward(W, C, attrs.get("eps", EPS), ctx)
    else:
        grouped = _traced_forward(W, C, attrs.get("eps", EPS), ctx)
    return _to_layer(grouped, attrs.get("layer_shape"))


def _traced_forward(W, C, eps, ctx):
    codebook = sort_codebook(C, eps)
    x = segment_positions(W, codebook.values, codebook.widths)
    steps = step_decisions(x)
    Z = steps.sum(axis=-1)
    ctx["perm"] = codebook.perm
    ctx["steps"] = steps
    ctx["clip0"] = np.clip(x, 0.0, 1.0)
    ctx["region"] = np.digitize(x, [0.0, 1.0])
    ctx["wide"] = np.diff(codebook.values, axis=-1) >= eps
    ctx["region_changed"] = False
    return dequantize(Z, codebook.values)


def _frozen_forward(W, C, eps, ctx):
    # Step decisions and permutation from the traced evaluation stay fixed;
    # only the clip arguments move, so differences follow the STE.
    values = np.take_along_axis(C, ctx["perm"], axis=-1)
    diffs = np.diff(values, axis=-1)
    widths = np.maximum(diffs, eps)
    x = segment_positions(W, values, widths)
    changed = np.any((diffs >= eps) != ctx["wide"]) or np.any(np.digitize(x, [0.0, 1.0]) != ctx["region"])
    ctx["region_changed"] = bool(changed)
    moved = ctx["steps"] + np.clip(x, 0.0, 1.0) - ctx["clip0"]
    return values[..., :1] + (diffs[..., None, :] * moved).sum(axis=-1)


def _quantize_backward(upstream, values, out, attrs, ctx):
    W, C = values
    eps = attrs.get("eps", EPS)
    upstream = _from_layer(upstream, W.shape, attrs.get("layer_shape"))
    perm = ctx["perm"]
    steps = ctx["steps"]
    sorted_values = np.take_along_axis(C, perm, axis=-1)
    diffs = np.diff(sorted_values, axis=-1)
    widths = np.maximum(diffs, eps)
    wide = diffs >= eps
    x = segment_positions(W, sorted_values, widths)

    # STE: the step passes gradients where 0 <= x <= 1
    inside = (x >= 0.0) & (x <= 1.0)
    g = diffs[..., None, :] * inside * upstream[..., None]
    grad_w = (g / widths[..., None, :]).sum(axis=-1)

    grad_v = np.zeros_like(sorted_values)
    grad_v[..., 0] += upstream.sum(axis=-1)
    fired = (upstream[..., None] * steps).sum(axis=-2)
    grad_v[..., 1:] += fired
    grad_v[..., :-1] -= fired
    lower = np.where(wide, (g * (x - 1.0) / widths[..., None, :]).sum(axis=-2),
                     (-g / widths[..., None, :]).sum(axis=-2))
    upper = np.where(wide, (-g * x / widths[..., None, :]).sum(axis=-2), 0.0)
    grad_v[..., :-1] += lower
    grad_v[..., 1:] += upper

    grad_c = np.empty_like(grad_v)
    np.put_along_axis(grad_c, perm, grad_v, axis=-1)
    return ops.unbroadcast(grad_w, W.shape), ops.unbroadcast(grad_c, C.shape)


ops.register_op("quantize", _quantize_forward, _quantize_backward)


def quantize_node(graph, W, C, eps=EPS, layer_shape=None):
    """
    Record a straight-through quantization node on ``graph``.

    The forward pass is quantize_segmented. The backward pass treats every
    segment step as the identity on ``0 <= x <= 1`` and zero elsewhere, and
    differentiates the normalization, segment widths and sort (held as a fixed
    permutation) exactly. With ``layer_shape`` the grouped result comes back
    as the (D_in, D_out) weight matrix.
    """
    return graph.apply("quantize", W, C, eps=eps, layer_shape=layer_shape)
