"""Registry of differentiable primitives used by the computation graph."""

from collections import namedtuple

import numpy as np

from pylcq.classes.errors import ShapeError

# Variance floor added before the square root of layer-norm
LAYER_NORM_EPS = 1e-5
GELU_COEF = np.sqrt(2.0 / np.pi)

Op = namedtuple("Op", ["kind", "forward", "backward"])

_REGISTRY = {}


def register_op(kind, forward, backward):
    """
    Register a primitive so that graphs can record it.

    Parameters
    ----------
    kind : str
        Name recorded on every node of this primitive.
    forward : callable
        ``forward(values, attrs, ctx, frozen)`` returning the output array.
    backward : callable
        ``backward(upstream, values, out, attrs, ctx)`` returning one gradient
        (or None) per input. Registering a custom backward is how a node
        overrides the default chain rule.
    """
    _REGISTRY[kind] = Op(kind, forward, backward)


def get_op(kind):
    """Return the registered primitive called ``kind``."""
    try:
        return _REGISTRY[kind]
    except KeyError:
        raise ShapeError("unknown operation '{}'".format(kind))


def registered_kinds():
    """Names of every registered primitive."""
    return sorted(_REGISTRY)


def unbroadcast(grad, shape):
    """
    Sum a broadcast gradient back down to ``shape``.

    Parameters
    ----------
    grad : numpy.ndarray
        Gradient with the broadcast output shape.
    shape : tuple
        Shape of the operand that was broadcast.

    Returns
    -------
    reduced : numpy.ndarray
    """
    shape = tuple(shape)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError("shapes {} cannot be broadcast together".format(shapes))


# Elementwise arithmetic
def _add_forward(values, attrs, ctx, frozen):
    _broadcast_shape(values[0].shape, values[1].shape)
    return values[0] + values[1]


def _add_backward(upstream, values, out, attrs, ctx):
    return unbroadcast(upstream, values[0].shape), unbroadcast(upstream, values[1].shape)


def _subtract_forward(values, attrs, ctx, frozen):
    _broadcast_shape(values[0].shape, values[1].shape)
    return values[0] - values[1]


def _subtract_backward(upstream, values, out, attrs, ctx):
    return unbroadcast(upstream, values[0].shape), unbroadcast(-upstream, values[1].shape)


def _multiply_forward(values, attrs, ctx, frozen):
    _broadcast_shape(values[0].shape, values[1].shape)
    return values[0] * values[1]


def _multiply_backward(upstream, values, out, attrs, ctx):
    a, b = values
    return unbroadcast(upstream * b, a.shape), unbroadcast(upstream * a, b.shape)


def _broadcast_forward(values, attrs, ctx, frozen):
    try:
        return np.broadcast_to(values[0], attrs["shape"]).copy()
    except ValueError:
        raise ShapeError("cannot broadcast {} to {}".format(values[0].shape, attrs["shape"]))


def _broadcast_backward(upstream, values, out, attrs, ctx):
    return (unbroadcast(upstream, values[0].shape),)


# Linear algebra
def _matmul_forward(values, attrs, ctx, frozen):
    a, b = values
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul of {} and {}".format(a.shape, b.shape))
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    return np.matmul(a, b)


def _matmul_backward(upstream, values, out, attrs, ctx):
    a, b = values
    grad_a = np.matmul(upstream, np.swapaxes(b, -1, -2))
    grad_b = np.matmul(np.swapaxes(a, -1, -2), upstream)
    return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)


def _transpose_axes(ndim, axes):
    if axes is None:
        axes = list(range(ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _transpose_forward(values, attrs, ctx, frozen):
    axes = _transpose_axes(values[0].ndim, attrs.get("axes"))
    return np.ascontiguousarray(np.transpose(values[0], axes))


def _transpose_backward(upstream, values, out, attrs, ctx):
    axes = _transpose_axes(values[0].ndim, attrs.get("axes"))
    return (np.transpose(upstream, np.argsort(axes)),)


# Smooth nonlinearities
def _tanh_forward(values, attrs, ctx, frozen):
    return np.tanh(values[0])


def _tanh_backward(upstream, values, out, attrs, ctx):
    return (upstream * (1.0 - out * out),)


def _softmax_forward(values, attrs, ctx, frozen):
    x = values[0]
    shifted = np.exp(x - x.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def _softmax_backward(upstream, values, out, attrs, ctx):
    inner = (upstream * out).sum(axis=-1, keepdims=True)
    return (out * (upstream - inner),)


def _layer_norm_forward(values, attrs, ctx, frozen):
    x = values[0]
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + attrs.get("eps", LAYER_NORM_EPS))
    ctx["std"] = std
    return centered / std


def _layer_norm_backward(upstream, values, out, attrs, ctx):
    std = ctx["std"]
    mean_up = upstream.mean(axis=-1, keepdims=True)
    mean_up_out = (upstream * out).mean(axis=-1, keepdims=True)
    return ((upstream - mean_up - out * mean_up_out) / std,)


def _gelu_forward(values, attrs, ctx, frozen):
    x = values[0]
    return 0.5 * x * (1.0 + np.tanh(GELU_COEF * (x + 0.044715 * x ** 3)))


def _gelu_backward(upstream, values, out, attrs, ctx):
    x = values[0]
    t = np.tanh(GELU_COEF * (x + 0.044715 * x ** 3))
    dt = (1.0 - t * t) * GELU_COEF * (1.0 + 3.0 * 0.044715 * x * x)
    return (upstream * (0.5 * (1.0 + t) + 0.5 * x * dt),)


def _clip_forward(values, attrs, ctx, frozen):
    return np.clip(values[0], attrs["lo"], attrs["hi"])


def _clip_backward(upstream, values, out, attrs, ctx):
    x = values[0]
    inside = (x >= attrs["lo"]) & (x <= attrs["hi"])
    return (upstream * inside,)


# Reductions
def _reduce_sum_forward(values, attrs, ctx, frozen):
    return np.asarray(values[0].sum(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)),
                      dtype=np.float64)


def _reduce_sum_backward(upstream, values, out, attrs, ctx):
    x = values[0]
    axis = attrs.get("axis")
    if axis is not None and not attrs.get("keepdims", False):
        upstream = np.expand_dims(upstream, axis)
    return (np.broadcast_to(upstream, x.shape).copy(),)


def _squared_norm_forward(values, attrs, ctx, frozen):
    x = values[0]
    return np.asarray(np.sum(x * x), dtype=np.float64)


def _squared_norm_backward(upstream, values, out, attrs, ctx):
    return (2.0 * values[0] * upstream,)


register_op("add", _add_forward, _add_backward)
register_op("subtract", _subtract_forward, _subtract_backward)
register_op("multiply", _multiply_forward, _multiply_backward)
register_op("broadcast", _broadcast_forward, _broadcast_backward)
register_op("matmul", _matmul_forward, _matmul_backward)
register_op("transpose", _transpose_forward, _transpose_backward)
register_op("tanh", _tanh_forward, _tanh_backward)
register_op("softmax", _softmax_forward, _softmax_backward)
register_op("layer_norm", _layer_norm_forward, _layer_norm_backward)
register_op("gelu", _gelu_forward, _gelu_backward)
register_op("clip", _clip_forward, _clip_backward)
register_op("reduce_sum", _reduce_sum_forward, _reduce_sum_backward)
register_op("squared_norm", _squared_norm_forward, _squared_norm_backward)
