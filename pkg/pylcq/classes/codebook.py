"""
The CodebookParams class: learnable codebook parameters of one weight layer.
"""

import numpy as np

from pylcq.classes.config import layer_grouping
from pylcq.classes.errors import ShapeError


class CodebookParams:
    """
    Reparameterized codebook leaves of one layer, stacked over its subsets.

    A layer of shape (D_in, D_out) is split into N_V subsets of N_G groups of
    G weights (see ``pylcq.classes.config.layer_grouping``). Each subset owns
    one QPS matrix V; each group owns one column of S and one offset.

    Attributes
    ----------
    sbar : numpy.ndarray
        ``(N_V, N_D, N_G)`` scaling leaves.
    vbar : numpy.ndarray
        ``(N_V, N_D, N_Q)`` QPS leaves.
    bbar : numpy.ndarray
        ``(N_V, N_G, 1)`` offset leaves.
    w_min, w_max : numpy.ndarray
        ``(N_V, N_G)`` group extrema of the weights.
    """

    def __init__(self, name, shape, grouping, sbar, vbar, bbar, w_min, w_max):
        # Layer name such as "block0.fc1"
        self.name = name
        # (D_in, D_out) of the weight matrix
        self.shape = tuple(shape)
        # Group size, group count, groups per subset, subset count
        self.grouping = grouping
        self.sbar = np.asarray(sbar, dtype=np.float64)
        self.vbar = np.asarray(vbar, dtype=np.float64)
        self.bbar = np.asarray(bbar, dtype=np.float64)
        self.w_min = np.asarray(w_min, dtype=np.float64)
        self.w_max = np.asarray(w_max, dtype=np.float64)
        self.check()

    @classmethod
    def zeros(cls, name, weight, config):
        """
        All-zero leaves for ``weight``, with its group extrema filled in.
        """
        grouping = layer_grouping(config, weight.shape)
        grouped = group_weights(weight, grouping)
        n_v, n_g = grouping.n_subsets, grouping.groups_per_subset
        return cls(name, weight.shape, grouping,
                   np.zeros((n_v, config.rank, n_g)),
                   np.zeros((n_v, config.rank, config.n_q)),
                   np.zeros((n_v, n_g, 1)),
                   grouped.min(axis=-1), grouped.max(axis=-1))

    @property
    def n_subsets(self):
        return self.sbar.shape[0]

    @property
    def rank(self):
        return self.sbar.shape[1]

    @property
    def n_q(self):
        return self.vbar.shape[2]

    @property
    def coefficient(self):
        """Half-range ``(max - min) / 2`` of every group, ``(N_V, N_G)``."""
        return (self.w_max - self.w_min) / 2.0

    def check(self):
        n_v, n_d, n_g = self.sbar.shape
        expected = {
            "vbar": (n_v, n_d, self.vbar.shape[2]),
            "bbar": (n_v, n_g, 1),
            "w_min": (n_v, n_g),
            "w_max": (n_v, n_g),
        }
        for key, shape in expected.items():
            if getattr(self, key).shape != shape:
                raise ShapeError("{} of layer '{}' has shape {}, expected {}".format(
                    key, self.name, getattr(self, key).shape, shape))
        if (n_v, n_g) != (self.grouping.n_subsets, self.grouping.groups_per_subset):
            raise ShapeError("leaves of layer '{}' do not match its grouping".format(self.name))

    def leaves(self):
        """The three learnable arrays keyed by their leaf suffix."""
        return {"sbar": self.sbar, "vbar": self.vbar, "bbar": self.bbar}

    def copy(self):
        return CodebookParams(self.name, self.shape, self.grouping, self.sbar.copy(), self.vbar.copy(),
                              self.bbar.copy(), self.w_min.copy(), self.w_max.copy())

    def with_leaves(self, sbar=None, vbar=None, bbar=None):
        """Copy with some leaves replaced."""
        params = self.copy()
        params.sbar = params.sbar if sbar is None else np.array(sbar, dtype=np.float64)
        params.vbar = params.vbar if vbar is None else np.array(vbar, dtype=np.float64)
        params.bbar = params.bbar if bbar is None else np.array(bbar, dtype=np.float64)
        params.check()
        return params


def group_weights(weight, grouping):
    """
    Split a (D_in, D_out) matrix into ``(N_V, N_G, G)`` groups.

    The matrix is read output-channel-major, so a group holds G consecutive
    input weights of one output channel (or spans several channels when
    G > D_in).
    """
    weight = np.asarray(weight, dtype=np.float64)
    return weight.T.reshape(grouping.n_subsets, grouping.groups_per_subset, grouping.group_size)


def ungroup_weights(grouped, shape):
    """Inverse of group_weights."""
    rows, cols = shape
    return np.asarray(grouped).reshape(cols, rows).T
