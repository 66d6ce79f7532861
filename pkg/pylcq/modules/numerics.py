"""
Evaluation and reverse-mode differentiation of recorded graphs.

The graph itself lives in ``pylcq.classes.graph``; the primitives in
``pylcq.modules.ops``.
"""

import logging

import numpy as np

from pylcq.classes.errors import NumericsError, ShapeError
from pylcq.classes.graph import Graph, Node, check_finite
from pylcq.modules import ops

logger = logging.getLogger(__name__)


def forward_eval(graph, inputs=None, frozen=False):
    """
    Re-evaluate every recorded node in declaration order.

    Parameters
    ----------
    graph : Graph
        A graph recorded by model code.
    inputs : dict
        Optional new values for named leaves. Shapes must not change.
    frozen : bool
        Keep the step decisions of every custom-gradient node from the last
        regular evaluation. Used by finite-difference checks of the STE.

    Returns
    -------
    outputs : dict
        Copies of the values of every named output.
    """
    inputs = inputs or {}
    for name, value in inputs.items():
        if name not in graph.leaves:
            raise NumericsError("no leaf named '{}'".format(name))
        leaf = graph.leaves[name]
        value = np.array(value, dtype=np.float64)
        if value.shape != leaf.value.shape:
            raise ShapeError("leaf '{}' expects shape {}, got {}".format(name, leaf.value.shape, value.shape))
        leaf.value = value

    graph.region_changed = False
    for node in graph.nodes:
        if node.is_leaf:
            continue
        op = ops.get_op(node.kind)
        node.value = op.forward([n.value for n in node.inputs], node.attrs, node.ctx, frozen)
        check_finite(node)
        if frozen and node.ctx.get("region_changed"):
            graph.region_changed = True

    return {name: node.value.copy() for name, node in graph.outputs.items()}


def backward(graph, loss_node, wrt=None):
    """
    Gradients of a scalar node with respect to named leaves.

    Nodes are visited in exact reverse recording order. Primitives with a
    registered custom backward (the quantizer's STE) replace the chain rule
    at their node.

    Parameters
    ----------
    graph : Graph
        The graph holding ``loss_node``, already evaluated.
    loss_node : Node or str
        A scalar node, or the name of a scalar output.
    wrt : list
        Leaf names or leaf nodes. Defaults to every leaf with requires_grad.

    Returns
    -------
    grads : dict
        ``{leaf name: gradient}`` with one entry per requested leaf.
    """
    if isinstance(loss_node, str):
        loss_node = graph.outputs[loss_node]
    if loss_node.value.size != 1:
        raise NumericsError("loss node {} is not scalar (shape {})".format(loss_node.index, loss_node.shape))

    if wrt is None:
        wrt = [name for name, leaf in graph.leaves.items() if leaf.requires_grad]
    targets = []
    for item in wrt:
        node = graph.leaves.get(item) if isinstance(item, str) else item
        if not isinstance(node, Node) or node.kind != "leaf":
            raise NumericsError("gradient requested for non-leaf {!r}".format(item))
        targets.append(node)

    grads = [None] * len(graph.nodes)
    grads[loss_node.index] = np.ones_like(loss_node.value)
    for node in reversed(graph.nodes[:loss_node.index + 1]):
        upstream = grads[node.index]
        if upstream is None or node.is_leaf or not node.requires_grad:
            continue
        op = ops.get_op(node.kind)
        values = [n.value for n in node.inputs]
        local = op.backward(upstream, values, node.value, node.attrs, node.ctx)
        for parent, grad in zip(node.inputs, local):
            if grad is None or not parent.requires_grad:
                continue
            if grad.shape != parent.value.shape:
                raise ShapeError("gradient of shape {} for node {} of shape {}".format(
                    grad.shape, parent.index, parent.value.shape))
            if grads[parent.index] is None:
                grads[parent.index] = grad.copy()
            else:
                grads[parent.index] = grads[parent.index] + grad

    result = {}
    for node in targets:
        grad = grads[node.index]
        result[node.name] = np.zeros_like(node.value) if grad is None else grad
    return result


def relative_error(analytic, numeric):
    """
    Elementwise ``|a - c| / max(|a|, |c|, 1e-12)``.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / denom


def _scalar(function, point):
    value = function(point)
    if isinstance(value, tuple):
        value = value[0]
    value = float(np.asarray(value, dtype=np.float64).reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericsError("function value is not finite")
    return value


def central_difference(function, point, step=1e-6, coords=None):
    """
    Central finite differences of a scalar function.

    Parameters
    ----------
    function : callable
        Maps an array shaped like ``point`` to a scalar, or to a
        ``(value, gradient)`` pair of which only the value is used.
    point : numpy.ndarray
        Where to differentiate.
    step : float
        Perturbation applied to one coordinate at a time.
    coords : list
        Flat indices to differentiate; all coordinates by default.

    Returns
    -------
    numeric : numpy.ndarray
        One derivative per entry of ``coords``.
    """
    if step <= 0:
        raise NumericsError("finite difference step must be positive")
    point = np.array(point, dtype=np.float64)
    flat = point.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    numeric = []
    for index in coords:
        original = flat[index]
        flat[index] = original + step
        upper = _scalar(function, point)
        flat[index] = original - step
        lower = _scalar(function, point)
        flat[index] = original
        numeric.append((upper - lower) / (2.0 * step))
    return np.array(numeric, dtype=np.float64)


def finite_diff_check(function, point, step=1e-6, analytic=None, coords=None):
    """
    Largest relative error between an analytic gradient and central differences.

    Parameters
    ----------
    function : callable
        Scalar function of an array. When ``analytic`` is not given it must
        return ``(value, gradient)``.
    point : array_like
        Where to compare. Keeping it away from quantization segment
        boundaries is the caller's duty.
    step : float
        Finite-difference step.
    analytic : numpy.ndarray
        Gradient at ``point``, shaped like ``point``.
    coords : list
        Flat indices to compare; all coordinates by default.

    Returns
    -------
    error : float
        max over compared coordinates of ``relative_error``.

    Example:

    >>> finite_diff_check(lambda x: (float(x[0] ** 2), 2 * x), np.array([3.0]))
    """
    point = np.array(point, dtype=np.float64)
    if analytic is None:
        result = function(point.copy())
        if not isinstance(result, tuple):
            raise NumericsError("function must return (value, gradient) when no analytic gradient is given")
        analytic = result[1]
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if analytic.size != point.size:
        raise ShapeError("analytic gradient has {} entries for a point of {}".format(analytic.size, point.size))
    coords = list(range(point.size)) if coords is None else list(coords)
    if not coords:
        return 0.0

    numeric = central_difference(function, point, step, coords)
    errors = relative_error(analytic[coords], numeric)
    worst = int(np.argmax(errors))
    logger.debug("finite difference check: worst coordinate %d, error %.3e", coords[worst], errors[worst])
    return float(errors[worst])


def value_and_grad(graph, loss_name, inputs=None, wrt=None):
    """
    Evaluate ``graph`` with new leaf values and differentiate a named output.

    Returns
    -------
    value : float
    grads : dict
    """
    outputs = forward_eval(graph, inputs)
    grads = backward(graph, graph.outputs[loss_name], wrt)
    return float(outputs[loss_name]), grads


__all__ = [
    "Graph",
    "forward_eval",
    "backward",
    "central_difference",
    "finite_diff_check",
    "relative_error",
    "value_and_grad",
]
