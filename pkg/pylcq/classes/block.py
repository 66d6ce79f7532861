"""
The BlockWeights and CalibrationSet classes.
"""

import numpy as np

from pylcq.classes.errors import ShapeError

# The six linear layers that get quantized, in storage order
LAYERS = ("qproj", "kproj", "vproj", "oproj", "fc1", "fc2")
NORMS = ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")


class BlockWeights:
    """
    Parameters of one pre-norm transformer block.

    Linear layers are stored as (D_in, D_out) matrices applied as ``X @ W``.

    Example instantiation from a dictionary of arrays:

    >>> weights = BlockWeights.from_dict(arrays, heads=2)
    """

    def __init__(self, qproj, kproj, vproj, oproj, fc1, fc2, ln1_gain, ln1_bias, ln2_gain, ln2_bias, heads):
        self.qproj = np.asarray(qproj, dtype=np.float64)
        self.kproj = np.asarray(kproj, dtype=np.float64)
        self.vproj = np.asarray(vproj, dtype=np.float64)
        self.oproj = np.asarray(oproj, dtype=np.float64)
        self.fc1 = np.asarray(fc1, dtype=np.float64)
        self.fc2 = np.asarray(fc2, dtype=np.float64)
        self.ln1_gain = np.asarray(ln1_gain, dtype=np.float64)
        self.ln1_bias = np.asarray(ln1_bias, dtype=np.float64)
        self.ln2_gain = np.asarray(ln2_gain, dtype=np.float64)
        self.ln2_bias = np.asarray(ln2_bias, dtype=np.float64)
        # Number of attention heads
        self.heads = int(heads)
        self.check()

    @classmethod
    def from_dict(cls, arrays, heads):
        return cls(heads=heads, **{key: arrays[key] for key in LAYERS + NORMS})

    @property
    def dim(self):
        return self.qproj.shape[0]

    @property
    def ff_dim(self):
        return self.fc1.shape[1]

    def check(self):
        """Raise ShapeError for inconsistent shapes and ValueError for non-finite entries."""
        dim, ff_dim = self.qproj.shape[0], self.fc1.shape[1]
        expected = {
            "qproj": (dim, dim),
            "kproj": (dim, dim),
            "vproj": (dim, dim),
            "oproj": (dim, dim),
            "fc1": (dim, ff_dim),
            "fc2": (ff_dim, dim),
        }
        expected.update({key: (dim,) for key in NORMS})
        for key, shape in expected.items():
            value = getattr(self, key)
            if value.shape != shape:
                raise ShapeError("{} has shape {}, expected {}".format(key, value.shape, shape))
            if not np.all(np.isfinite(value)):
                raise ValueError("{} contains non-finite values".format(key))
        if self.heads < 1 or dim % self.heads:
            raise ShapeError("dimension {} is not divisible by {} heads".format(dim, self.heads))

    def layers(self):
        """``{name: matrix}`` of the six quantization targets."""
        return {key: getattr(self, key) for key in LAYERS}

    def norms(self):
        return {key: getattr(self, key) for key in NORMS}

    def with_layers(self, layers):
        """Copy of the block with some linear layers replaced, e.g. by quantized ones."""
        arrays = {**self.layers(), **self.norms()}
        arrays.update(layers)
        return BlockWeights.from_dict(arrays, self.heads)


class CalibrationSet:
    """
    Calibration inputs of the block being quantized.

    Attributes
    ----------
    inputs : numpy.ndarray
        ``(N_X, L, D)`` raw samples fed to the first block.
    fp : numpy.ndarray
        Features propagated through full-precision blocks.
    tilde : numpy.ndarray
        Features propagated through quantized blocks.
    """

    def __init__(self, inputs, fp=None, tilde=None):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        if self.inputs.ndim != 3:
            raise ShapeError("calibration inputs must be (N_X, L, D), got {}".format(self.inputs.shape))
        # Before the first block both variants are the raw inputs
        self.fp = self.inputs.copy() if fp is None else np.asarray(fp, dtype=np.float64)
        self.tilde = self.inputs.copy() if tilde is None else np.asarray(tilde, dtype=np.float64)
        if self.fp.shape != self.inputs.shape or self.tilde.shape != self.inputs.shape:
            raise ShapeError("propagated features must match the input shape {}".format(self.inputs.shape))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def seq_len(self):
        return self.inputs.shape[1]

    @property
    def dim(self):
        return self.inputs.shape[2]

    def propagated(self, fp, tilde):
        """New set carrying the same raw inputs and the next block's features."""
        return CalibrationSet(self.inputs, fp, tilde)
