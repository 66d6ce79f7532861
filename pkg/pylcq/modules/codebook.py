"""
Low-rank codebooks: reparameterization, offset substitution and the graph
that turns bar-space leaves into quantized layer weights.
"""

import logging

import numpy as np

from pylcq.classes.codebook import group_weights
from pylcq.classes.errors import CodebookError, ShapeError
from pylcq.classes.graph import Graph
from pylcq.modules import quantizer

logger = logging.getLogger(__name__)

# Largest |value / coefficient| passed to artanh
INVERT_CLAMP = 1.0 - 1e-7


def build_codebook(S, V, B):
    """
    Materialize ``C = S^T V - B``.

    Parameters
    ----------
    S : numpy.ndarray
        ``(N_D, N_G)`` scaling vectors (optionally with a leading subset axis).
    V : numpy.ndarray
        ``(N_D, N_Q)`` quantization point sets.
    B : numpy.ndarray
        ``(N_G,)`` offsets.

    Returns
    -------
    C : numpy.ndarray
        ``(N_G, N_Q)`` codebook.

    Example:

    >>> build_codebook(np.array([[2.0]]), np.array([[-1.0, 1.0]]), np.array([0.0]))
    array([[-2.,  2.]])
    """
    S = np.asarray(S, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if S.ndim < 2 or S.ndim != V.ndim or S.shape[:-1] != V.shape[:-1] or B.shape != S.shape[:-2] + S.shape[-1:]:
        raise ShapeError("codebook of S {}, V {}, B {}".format(S.shape, V.shape, B.shape))
    graph = Graph()
    C = graph.transpose(graph.constant(S)) @ graph.constant(V) - graph.constant(B[..., None])
    return C.value


def reparam_scale(sbar, w_min, w_max):
    """``tanh(sbar) * (max - min) / 2`` for every group."""
    return np.tanh(np.asarray(sbar, dtype=np.float64)) * ((np.asarray(w_max) - np.asarray(w_min)) / 2.0)


def reparam_qps(vbar):
    """``tanh(vbar)``, elementwise."""
    return np.tanh(np.asarray(vbar, dtype=np.float64))


def substitute_offset(Bprime, S, V, eps=quantizer.EPS):
    """
    Replace each offset by the codeword of ``C' = S^T V`` it quantizes to.

    Parameters
    ----------
    Bprime : numpy.ndarray
        ``(N_G,)`` reparameterized offsets.
    S, V : numpy.ndarray
        As for build_codebook.

    Returns
    -------
    B : numpy.ndarray
        ``(N_G,)`` offsets, each an element of the matching row of C'.
    """
    Bprime = np.asarray(Bprime, dtype=np.float64)
    Cprime = build_codebook(S, V, np.zeros_like(Bprime))
    codebook = quantizer.sort_codebook(Cprime, eps)
    return quantizer.quantize_segmented(Bprime[..., None], codebook)[..., 0]


def invert_reparam(value, coefficient):
    """
    Bar-space value whose reparameterization gives ``value``.

    The ratio ``value / coefficient`` is clamped to ``1 - 1e-7`` in magnitude;
    a zero coefficient maps to zero.
    """
    value = np.asarray(value, dtype=np.float64)
    coefficient = np.broadcast_to(np.asarray(coefficient, dtype=np.float64), value.shape)
    degenerate = coefficient == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(degenerate, 0.0, value / np.where(degenerate, 1.0, coefficient))
    clamped = np.abs(ratio) > INVERT_CLAMP
    if np.any(clamped):
        logger.debug("clamped %d reparameterization ratios", int(clamped.sum()))
    return np.arctanh(np.clip(ratio, -INVERT_CLAMP, INVERT_CLAMP))


def codebook_nodes(graph, params, eps=quantizer.EPS, prefix=None):
    """
    Record the derivation of one layer's codebook on ``graph``.

    Parameters
    ----------
    graph : Graph
        Graph to record on.
    params : CodebookParams
        Bar-space leaves of the layer.
    eps : float
        Minimum segment width of the quantizer.
    prefix : str
        When given, the leaves become trainable graph leaves named
        ``{prefix}.sbar``, ``{prefix}.vbar`` and ``{prefix}.bbar``;
        otherwise they are constants.

    Returns
    -------
    nodes : dict
        Nodes ``S``, ``V``, ``Bprime``, ``Cprime``, ``B`` and ``C``.
    """
    if prefix is None:
        sbar, vbar, bbar = (graph.constant(a) for a in (params.sbar, params.vbar, params.bbar))
    else:
        sbar = graph.leaf(prefix + ".sbar", params.sbar)
        vbar = graph.leaf(prefix + ".vbar", params.vbar)
        bbar = graph.leaf(prefix + ".bbar", params.bbar)
    coefficient = params.coefficient

    S = graph.tanh(sbar) * coefficient[:, None, :]
    V = graph.tanh(vbar)
    Bprime = graph.tanh(bbar) * coefficient[:, :, None]
    Cprime = graph.transpose(S) @ V
    B = quantizer.quantize_node(graph, Bprime, Cprime, eps)
    C = Cprime - B
    return {"S": S, "V": V, "Bprime": Bprime, "Cprime": Cprime, "B": B, "C": C}


def quantized_weight_node(graph, params, weight, eps=quantizer.EPS, prefix=None):
    """
    Record ``W_Q = Q(W, C)`` for one layer and return ``(W_Q node, codebook nodes)``.

    ``W_Q`` has the layer's (D_in, D_out) shape.
    """
    nodes = codebook_nodes(graph, params, eps, prefix)
    grouped = graph.constant(group_weights(weight, params.grouping))
    W_Q = quantizer.quantize_node(graph, grouped, nodes["C"], eps, layer_shape=params.shape)
    return W_Q, nodes


def derive_codebook(params, eps=quantizer.EPS):
    """
    Values of S, V, B', C', B and C for one layer.

    Evaluated through the same recorded operations as training, so the
    results are bit-identical to the training-time values.
    """
    graph = Graph()
    nodes = codebook_nodes(graph, params, eps)
    return {key: node.value for key, node in nodes.items()}


def quantize_weight(params, weight, eps=quantizer.EPS):
    """Quantized (D_in, D_out) weights of one layer."""
    graph = Graph()
    W_Q, _ = quantized_weight_node(graph, params, weight, eps)
    return W_Q.value


def check_zero_inclusion(C, name=""):
    """
    Raise CodebookError unless every codebook row holds an exact 0.0.
    """
    missing = ~np.any(np.asarray(C) == 0.0, axis=-1)
    if np.any(missing):
        raise CodebookError("{} codebook rows of layer '{}' lost their zero".format(int(missing.sum()), name))
