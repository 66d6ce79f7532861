"""
The Graph class: a recorded, re-evaluable computation over float64 tensors.
"""

import numpy as np

from pylcq.classes.errors import NumericsError
from pylcq.modules import ops


class Node:
    """
    One recorded operation (or leaf) of a Graph.

    Nodes support ``+``, ``-``, ``*`` and ``@`` so that model code reads like
    array code; every operator records a new node on the owning graph.
    """

    __slots__ = ("graph", "index", "kind", "inputs", "attrs", "value", "name", "requires_grad", "ctx")
    # Make numpy operands defer to the reflected Node operators
    __array_ufunc__ = None

    def __init__(self, graph, index, kind, inputs, attrs, value, name=None, requires_grad=False):
        self.graph = graph
        self.index = index
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.name = name
        self.requires_grad = requires_grad
        self.ctx = {}

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self.kind in ("leaf", "constant")

    def __repr__(self):
        return "Node({}, {}, shape={})".format(self.index, self.name or self.kind, self.value.shape)

    def __add__(self, other):
        return self.graph.add(self, other)

    def __radd__(self, other):
        return self.graph.add(other, self)

    def __sub__(self, other):
        return self.graph.subtract(self, other)

    def __rsub__(self, other):
        return self.graph.subtract(other, self)

    def __mul__(self, other):
        return self.graph.multiply(self, other)

    def __rmul__(self, other):
        return self.graph.multiply(other, self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    @property
    def T(self):
        return self.graph.transpose(self)


class Graph:
    """
    Records operations in topological order as they are applied.

    Values are computed eagerly when a node is recorded, so a graph always
    holds the result of its latest evaluation. ``pylcq.modules.numerics``
    re-evaluates a recorded graph with new leaf bindings and runs the
    reverse pass over it.

    Example:

    >>> g = Graph()
    >>> x = g.leaf("x", np.array([3.0]))
    >>> loss = g.squared_norm(x)
    """

    def __init__(self):
        # Nodes in the order they were recorded
        self.nodes = []
        # Named leaves that can be rebound by forward_eval
        self.leaves = {}
        # Named outputs reported by forward_eval
        self.outputs = {}
        # Set when a frozen evaluation moved a clip argument across 0 or 1
        self.region_changed = False

    def __len__(self):
        return len(self.nodes)

    def _record(self, kind, inputs, attrs, value, name=None, requires_grad=False):
        node = Node(self, len(self.nodes), kind, tuple(inputs), attrs, value, name, requires_grad)
        self.nodes.append(node)
        return node

    def leaf(self, name, value, requires_grad=True):
        """
        Record a named input.

        Parameters
        ----------
        name : str
            Binding name used by forward_eval and backward.
        value : array_like
            Initial value, stored as float64.
        requires_grad : bool
            Whether gradients flow to this leaf.
        """
        if name in self.leaves:
            raise NumericsError("leaf '{}' is already bound".format(name))
        node = self._record("leaf", (), {}, np.array(value, dtype=np.float64), name, requires_grad)
        self.leaves[name] = node
        return node

    def constant(self, value):
        """Record an unnamed input that never receives a gradient."""
        return self._record("constant", (), {}, np.asarray(value, dtype=np.float64))

    def as_node(self, value):
        """Return ``value`` if it is already a node of this graph, else wrap it as a constant."""
        if isinstance(value, Node):
            if value.graph is not self:
                raise NumericsError("node {} belongs to another graph".format(value))
            return value
        return self.constant(value)

    def output(self, name, node):
        """Mark ``node`` as a named output."""
        self.outputs[name] = node
        return node

    def apply(self, kind, *inputs, **attrs):
        """
        Record a primitive applied to ``inputs``.

        Raises
        ------
        ShapeError
            When the operands do not fit together.
        NumericsError
            When the result contains a non-finite value.
        """
        op = ops.get_op(kind)
        nodes = [self.as_node(item) for item in inputs]
        node = self._record(kind, nodes, attrs, None, requires_grad=any(n.requires_grad for n in nodes))
        node.value = op.forward([n.value for n in nodes], attrs, node.ctx, False)
        check_finite(node)
        return node

    # Primitive shortcuts
    def add(self, a, b):
        return self.apply("add", a, b)

    def subtract(self, a, b):
        return self.apply("subtract", a, b)

    def multiply(self, a, b):
        return self.apply("multiply", a, b)

    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def transpose(self, a, axes=None):
        return self.apply("transpose", a, axes=axes)

    def broadcast(self, a, shape):
        return self.apply("broadcast", a, shape=tuple(shape))

    def tanh(self, a):
        return self.apply("tanh", a)

    def softmax(self, a):
        return self.apply("softmax", a)

    def layer_norm(self, a, eps=ops.LAYER_NORM_EPS):
        return self.apply("layer_norm", a, eps=eps)

    def gelu(self, a):
        return self.apply("gelu", a)

    def clip(self, a, lo, hi):
        return self.apply("clip", a, lo=lo, hi=hi)

    def reduce_sum(self, a, axis=None, keepdims=False):
        return self.apply("reduce_sum", a, axis=axis, keepdims=keepdims)

    def squared_norm(self, a):
        return self.apply("squared_norm", a)


def check_finite(node):
    """Raise NumericsError naming the node if its value is not finite."""
    if not np.all(np.isfinite(node.value)):
        raise NumericsError("node {} ({}) produced non-finite values".format(node.index, node.kind))
