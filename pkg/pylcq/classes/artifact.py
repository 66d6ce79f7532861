"""
Records of a quantized model: double-quantized parameter groups, quantized
layers and the artifact that holds them.
"""

import numpy as np

from pylcq.classes.errors import ShapeError


class DQParams:
    """
    Uniformly quantized values in groups of ``dq_group``.

    Dequantized value of code ``c`` in a group with scale ``s`` and zero-code
    ``z`` is ``s * (c - z) / (2**bits - 1) * 2``.

    Attributes
    ----------
    scales : numpy.ndarray
        float16, one per group.
    zeros : numpy.ndarray
        int64 zero-codes, one per group.
    codes : numpy.ndarray
        int64 codes, one per value.
    bits : int
        Code width.
    group : int
        Values per group (the last group may be shorter).
    """

    def __init__(self, scales, zeros, codes, bits, group, alphas=None):
        self.scales = np.asarray(scales, dtype=np.float16)
        self.zeros = np.asarray(zeros, dtype=np.int64)
        self.codes = np.asarray(codes, dtype=np.int64)
        self.bits = int(bits)
        self.group = int(group)
        # Chosen range factor per group; not serialized
        self.alphas = alphas
        if self.scales.shape != self.zeros.shape:
            raise ShapeError("{} scales for {} zero-codes".format(self.scales.size, self.zeros.size))
        if self.scales.size != -(-self.codes.size // self.group):
            raise ShapeError("{} groups cannot hold {} codes".format(self.scales.size, self.codes.size))

    def __len__(self):
        return self.codes.size

    @classmethod
    def empty(cls, bits, group):
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), bits, group)

    def __eq__(self, other):
        return (isinstance(other, DQParams) and self.bits == other.bits and self.group == other.group
                and np.array_equal(self.scales.view(np.uint16), other.scales.view(np.uint16))
                and np.array_equal(self.zeros, other.zeros) and np.array_equal(self.codes, other.codes))


class QuantizedLayer:
    """
    Everything stored for one linear layer.

    Attributes
    ----------
    name : str
        Layer name such as ``block0.fc1``.
    shape : tuple
        (D_in, D_out).
    s1 : numpy.ndarray
        ``(N_V, N_G)`` float16 rank-1 scales.
    s_dq : list
        One DQParams per subset holding the ``(N_D - 1) * N_G`` higher-rank scales.
    v_dq : list
        One DQParams per subset holding the ``N_D * N_Q`` QPS values; empty
        sections when the QPS is implicit.
    b_idx : numpy.ndarray
        ``(N_V, N_G)`` sorted positions of the offsets in the offset-free codebook.
    z : numpy.ndarray
        ``(N_V, N_G, G)`` sorted positions of the quantized weights.
    """

    def __init__(self, name, shape, s1, s_dq, v_dq, b_idx, z):
        self.name = name
        self.shape = tuple(int(n) for n in shape)
        self.s1 = np.asarray(s1, dtype=np.float16)
        self.s_dq = list(s_dq)
        self.v_dq = list(v_dq)
        self.b_idx = np.asarray(b_idx, dtype=np.int64)
        self.z = np.asarray(z, dtype=np.int64)
        n_v = self.s1.shape[0]
        if len(self.s_dq) != n_v or len(self.v_dq) != n_v:
            raise ShapeError("layer '{}' needs {} dq sections per parameter".format(name, n_v))
        if self.b_idx.shape != self.s1.shape or self.z.shape[:2] != self.s1.shape:
            raise ShapeError("index arrays of layer '{}' do not match its {} groups".format(name, self.s1.shape))

    @property
    def n_subsets(self):
        return self.s1.shape[0]

    @property
    def n_weights(self):
        return self.shape[0] * self.shape[1]

    def __eq__(self, other):
        return (isinstance(other, QuantizedLayer) and self.name == other.name and self.shape == other.shape
                and np.array_equal(self.s1.view(np.uint16), other.s1.view(np.uint16))
                and self.s_dq == other.s_dq and self.v_dq == other.v_dq
                and np.array_equal(self.b_idx, other.b_idx) and np.array_equal(self.z, other.z))


class QuantArtifact:
    """
    A quantized model: the configuration echo plus its quantized layers.

    Example:

    >>> artifact = QuantArtifact(config, layers)
    >>> artifact.layer("block0.fc1").shape
    (64, 256)
    """

    def __init__(self, config, layers=None):
        self.config = config
        self.layers = list(layers or [])

    def __len__(self):
        return len(self.layers)

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def names(self):
        return [layer.name for layer in self.layers]

    def shapes(self):
        """``[(name, shape)]`` of every layer, in storage order."""
        return [(layer.name, layer.shape) for layer in self.layers]

    def __eq__(self, other):
        return isinstance(other, QuantArtifact) and self.layers == other.layers
