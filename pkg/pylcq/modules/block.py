"""
The toy pre-norm transformer block, synthetic calibration data and their
LCQT persistence.
"""

import logging

import numpy as np

from pylcq.classes.block import LAYERS, NORMS, BlockWeights, CalibrationSet
from pylcq.classes.errors import TensorFileError
from pylcq.classes.graph import Graph
from pylcq.modules import tensor_io

logger = logging.getLogger(__name__)

# Desk-scale defaults of the synthetic model
DEFAULT_SCALE = {
    "samples": 16,
    "seq_len": 64,
    "dim": 64,
    "ff_dim": 256,
    "heads": 2,
    "blocks": 2,
}
# Weight mixture: core Gaussian plus a wide outlier component
CORE_STD = 0.02
OUTLIER_STD = 0.1
OUTLIER_FRACTION = 0.05


def head_masks(dim, heads):
    """``(heads, 1, dim)`` column masks selecting the features of each head."""
    width = dim // heads
    masks = np.zeros((heads, 1, dim))
    for head in range(heads):
        masks[head, 0, head * width:(head + 1) * width] = 1.0
    return masks


def block_nodes(graph, X, weights, layers=None):
    """
    Record ``Y = h(X, W)`` on ``graph``.

    Parameters
    ----------
    graph : Graph
        Graph to record on.
    X : Node or numpy.ndarray
        ``(L, D)`` input features.
    weights : BlockWeights
        Layer-norm parameters and any linear layer not given in ``layers``.
    layers : dict
        Optional ``{layer name: node}`` overriding linear layers, such as
        quantized weights recorded on the same graph.

    Returns
    -------
    Y : Node
        ``(L, D)`` block output.
    """
    layers = layers or {}

    def linear(name):
        return layers[name] if name in layers else graph.constant(getattr(weights, name))

    X = graph.as_node(X)
    scale = 1.0 / np.sqrt(weights.dim // weights.heads)

    # Attention sublayer
    h = graph.layer_norm(X) * weights.ln1_gain + weights.ln1_bias
    q = h @ linear("qproj")
    k = h @ linear("kproj")
    v = h @ linear("vproj")
    k_t = graph.transpose(k)
    context = None
    for mask in head_masks(weights.dim, weights.heads):
        scores = (q * mask) @ k_t * scale
        head = graph.softmax(scores) @ (v * mask)
        context = head if context is None else context + head
    Y1 = X + context @ linear("oproj")

    # Feed-forward sublayer
    h2 = graph.layer_norm(Y1) * weights.ln2_gain + weights.ln2_bias
    return Y1 + graph.gelu(h2 @ linear("fc1")) @ linear("fc2")


def block_forward(X, weights):
    """
    Evaluate the block on one ``(L, D)`` sample or a ``(N_X, L, D)`` stack.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        return np.stack([block_forward(sample, weights) for sample in X])
    graph = Graph()
    return block_nodes(graph, X, weights).value


def random_weights(rng, shape):
    """Heavy-tailed mixture ``0.95 N(0, 0.02^2) + 0.05 N(0, 0.1^2)``."""
    outlier = rng.random(shape) < OUTLIER_FRACTION
    core = rng.normal(0.0, CORE_STD, shape)
    wide = rng.normal(0.0, OUTLIER_STD, shape)
    return np.where(outlier, wide, core)


def gen_calibration(seed=0, samples=16, seq_len=64, dim=64, ff_dim=256, heads=2, blocks=2):
    """
    Deterministic synthetic model and calibration inputs.

    Parameters
    ----------
    seed : int
        Seed of the numpy Generator every draw comes from.
    samples, seq_len, dim, ff_dim, heads, blocks : int
        N_X, L, D, D_ff, head count and block count.

    Returns
    -------
    calib : CalibrationSet
        Inputs drawn from N(0, 1).
    stack : list
        One BlockWeights per block.
    """
    rng = np.random.default_rng(seed)
    stack = []
    for _ in range(blocks):
        shapes = {
            "qproj": (dim, dim),
            "kproj": (dim, dim),
            "vproj": (dim, dim),
            "oproj": (dim, dim),
            "fc1": (dim, ff_dim),
            "fc2": (ff_dim, dim),
        }
        arrays = {name: random_weights(rng, shape) for name, shape in shapes.items()}
        arrays["ln1_gain"] = 1.0 + 0.05 * rng.standard_normal(dim)
        arrays["ln1_bias"] = 0.02 * rng.standard_normal(dim)
        arrays["ln2_gain"] = 1.0 + 0.05 * rng.standard_normal(dim)
        arrays["ln2_bias"] = 0.02 * rng.standard_normal(dim)
        stack.append(BlockWeights.from_dict(arrays, heads))
    inputs = rng.standard_normal((samples, seq_len, dim))
    logger.info("generated %d blocks (D=%d, D_ff=%d, heads=%d) and %d samples of length %d",
                blocks, dim, ff_dim, heads, samples, seq_len)
    return CalibrationSet(inputs), stack


def model_tensors(stack):
    """Flatten a block stack into LCQT tensors named ``block{i}.{param}``."""
    tensors = {}
    for index, weights in enumerate(stack):
        for name in LAYERS + NORMS:
            tensors["block{}.{}".format(index, name)] = getattr(weights, name)
    heads = stack[0].heads if stack else 1
    tensors["meta.heads"] = np.array([heads], dtype=np.float64)
    return tensors


def stack_from_tensors(tensors):
    """Inverse of model_tensors."""
    if "meta.heads" not in tensors:
        raise TensorFileError("model file has no 'meta.heads' tensor", 0)
    heads = int(tensors["meta.heads"].reshape(-1)[0])
    stack = []
    index = 0
    while "block{}.qproj".format(index) in tensors:
        prefix = "block{}.".format(index)
        try:
            arrays = {name: tensors[prefix + name].astype(np.float64) for name in LAYERS + NORMS}
        except KeyError as error:
            raise TensorFileError("model file is missing tensor {}".format(error), 0)
        stack.append(BlockWeights.from_dict(arrays, heads))
        index += 1
    return stack


def save_model(path, stack):
    tensor_io.write_tensors(path, model_tensors(stack))


def load_model(path):
    """Read a block stack written by save_model."""
    return stack_from_tensors(tensor_io.read_tensors(path))


def save_calibration(path, calib):
    tensor_io.write_tensors(path, {"inputs": calib.inputs})


def load_calibration(path):
    """Read calibration inputs written by save_calibration."""
    tensors = tensor_io.read_tensors(path)
    if "inputs" not in tensors:
        raise TensorFileError("calibration file has no 'inputs' tensor", 0)
    return CalibrationSet(tensors["inputs"].astype(np.float64))
