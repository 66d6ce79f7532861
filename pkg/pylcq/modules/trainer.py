"""
Block-wise optimization of the codebook parameters and the sequential
quantization of a block stack.
"""

import logging
import math
from collections import namedtuple

import numpy as np
import pandas as pd

from pylcq.classes.artifact import QuantArtifact
from pylcq.classes.block import LAYERS
from pylcq.classes.errors import DivergenceError, LCQError
from pylcq.classes.graph import Graph
from pylcq.classes.optimizer import OptimizerState
from pylcq.modules import numerics, quantizer
from pylcq.modules.block import block_forward, block_nodes
from pylcq.modules.codebook import check_zero_inclusion, derive_codebook, quantize_weight, quantized_weight_node
from pylcq.modules.doubleq import apply_dq_block
from pylcq.modules.initializer import init_block
from pylcq.modules.storage import dequantize_artifact

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["epoch", "mean_loss", "lr"]
LOSS_COLUMNS = ["block", "initial_loss", "pre_dq_loss", "post_dq_loss"]

BlockReport = namedtuple("BlockReport", ["params", "trace", "initial_loss", "trained_loss", "final_loss"])
ModelReport = namedtuple("ModelReport", ["artifact", "losses", "trace", "calib"])


def block_targets(x_tilde, x_fp, weights):
    """Full-precision block outputs on both feature variants: ``(h(X^fp, W), h(X̃, W))``."""
    return block_forward(x_fp, weights), block_forward(x_tilde, weights)


def reconstruction_loss(x_tilde, x_fp, weights, quantized=None, targets=None):
    """
    Two-term block reconstruction error.

    For every sample ``‖h(X̃, W_Q) - h(X^fp, W)‖² + ‖h(X̃, W_Q) - h(X̃, W)‖²``.

    Parameters
    ----------
    x_tilde, x_fp : numpy.ndarray
        ``(N_X, L, D)`` features from quantized and full-precision predecessors.
    weights : BlockWeights
        Full-precision block.
    quantized : dict
        ``{layer: W_Q}``; layers not given stay full precision.
    targets : tuple
        Precomputed block_targets.

    Returns
    -------
    total : float
        Sum over samples.
    per_sample : numpy.ndarray
        ``(N_X,)`` losses.
    """
    t_fp, t_tilde = targets if targets is not None else block_targets(x_tilde, x_fp, weights)
    qweights = weights.with_layers(quantized) if quantized else weights
    y = block_forward(x_tilde, qweights)
    per_sample = ((y - t_fp) ** 2).sum(axis=(1, 2)) + ((y - t_tilde) ** 2).sum(axis=(1, 2))
    return float(per_sample.sum()), per_sample


def quantize_block(params, weights, eps=quantizer.EPS):
    """``{layer: W_Q}`` of a block from its codebook parameters (no double quantization)."""
    return {name: quantize_weight(layer_params, weights.layers()[name], eps) for name, layer_params in params.items()}


def block_loss(x_tilde, x_fp, weights, params=None, eps=quantizer.EPS, targets=None):
    """
    Reconstruction loss with weights quantized from ``params``.

    Without ``params`` every layer stays full precision.

    Returns
    -------
    total : float
    per_sample : numpy.ndarray
    """
    quantized = quantize_block(params, weights, eps) if params else None
    return reconstruction_loss(x_tilde, x_fp, weights, quantized, targets)


def build_loss_graph(weights, params, x_tilde, t_fp, t_tilde, eps=quantizer.EPS):
    """
    Record the loss of a mini-batch on a fresh graph.

    The six quantized layers are recorded once with trainable leaves named
    ``{layer}.sbar``, ``{layer}.vbar`` and ``{layer}.bbar``; every sample then
    adds its own block forward and an output ``loss{j}``. Output ``loss`` is
    their sum in sample order.

    Returns
    -------
    graph : Graph
    codebooks : dict
        Codebook nodes of every layer, keyed by layer name.
    """
    graph = Graph()
    layers, codebooks = {}, {}
    for name in LAYERS:
        layers[name], codebooks[name] = quantized_weight_node(graph, params[name], weights.layers()[name], eps,
                                                              prefix=name)
    total = None
    for index in range(len(x_tilde)):
        y = block_nodes(graph, x_tilde[index], weights, layers)
        loss = graph.squared_norm(y - t_fp[index]) + graph.squared_norm(y - t_tilde[index])
        graph.output("loss{}".format(index), loss)
        total = loss if total is None else total + loss
    graph.output("loss", total)
    return graph, codebooks


def frozen_masks(params, config):
    """
    Entries of every leaf that training leaves at their starting values.

    The rank-1 QPS row stays on its uniform grid when V is implicit; under
    ``fix_rank1`` the rank-1 scales and all offsets stay as well.

    Returns
    -------
    masks : dict
        Boolean arrays keyed like the graph leaves (``{layer}.vbar``, ...);
        leaves with nothing frozen are left out.
    """
    masks = {}
    for name, layer_params in params.items():
        sbar = np.zeros(layer_params.sbar.shape, dtype=bool)
        vbar = np.zeros(layer_params.vbar.shape, dtype=bool)
        bbar = np.full(layer_params.bbar.shape, config.fix_rank1)
        sbar[:, 0] = config.fix_rank1
        vbar[:, 0] = config.fix_rank1 or config.implicit_v
        for key, mask in (("sbar", sbar), ("vbar", vbar), ("bbar", bbar)):
            if mask.any():
                masks["{}.{}".format(name, key)] = mask
    return masks


def optimize_block(weights, calib, config, params=None, rng=None, epoch_offset=0):
    """
    Train the codebook parameters of one block.

    Each step draws a mini-batch of sample indices, records the quantized
    block on a fresh graph, runs the reverse pass through the straight-through
    quantizers and applies one AdamW step under the cosine schedule.

    Parameters
    ----------
    weights : BlockWeights
        Full-precision block.
    calib : CalibrationSet
        Features entering this block.
    config : QuantConfig
    params : dict
        Initial CodebookParams by layer; init_block is run when missing.
    rng : numpy.random.Generator
        Source of the initialization and of the batch order. Without it both
        come from seeded_generators(config.seed), as in quantize_model.
    epoch_offset : int
        Added to the epoch numbers of the trace.

    Returns
    -------
    report : BlockReport
        Trained parameters, the per-epoch trace and the losses summed over
        all samples: initial, after training, and of the returned parameters.
        The last two differ only when ``restore_initial`` sets back a block
        that trained to a higher loss.

    Raises
    ------
    DivergenceError
        When a batch mean loss exceeds ``divergence_factor`` times the initial
        mean loss.
    """
    init_rng, rng = seeded_generators(config.seed) if rng is None else (rng, rng)
    if params is None:
        params = init_block(weights, config, init_rng)
    initial_params = {name: p.copy() for name, p in params.items()}
    params = {name: p.copy() for name, p in params.items()}

    x_tilde, x_fp = calib.tilde, calib.fp
    targets = block_targets(x_tilde, x_fp, weights)
    initial_loss, _ = block_loss(x_tilde, x_fp, weights, params, config.eps, targets)
    n_samples = len(calib)
    initial_mean = initial_loss / n_samples

    steps_per_epoch = math.ceil(n_samples / config.batch_size)
    state = OptimizerState.from_config(config, config.epochs * steps_per_epoch)
    leaves = {"{}.{}".format(name, key): value for name, p in params.items() for key, value in p.leaves().items()}
    masks = frozen_masks(params, config)
    frozen = {key: leaves[key][mask] for key, mask in masks.items()}
    logger.info("optimizing block: initial loss %.6g over %d samples, %d steps", initial_loss, n_samples,
                state.total_steps)

    rows = []
    for epoch in range(config.epochs):
        sample_losses = np.zeros(n_samples)
        lr = state.lr
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, config.batch_size):
            batch = order[start:start + config.batch_size]
            graph, codebooks = build_loss_graph(weights, params, x_tilde[batch], targets[0][batch],
                                                targets[1][batch], config.eps)
            if config.check_zero_inclusion:
                for name, nodes in codebooks.items():
                    check_zero_inclusion(nodes["C"].value, name)
            batch_losses = np.array([float(graph.outputs["loss{}".format(j)].value) for j in range(len(batch))])
            sample_losses[batch] = batch_losses

            batch_mean = batch_losses.mean()
            if initial_mean > 0 and batch_mean > config.divergence_factor * initial_mean:
                trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
                raise DivergenceError("batch loss {:.6g} exceeds {:g} times the initial mean {:.6g}".format(
                    batch_mean, config.divergence_factor, initial_mean), trace)

            grads = numerics.backward(graph, "loss")
            for key, mask in masks.items():
                if key in grads:
                    grads[key][mask] = 0.0
            lr = state.update(leaves, grads)
            for key, mask in masks.items():
                leaves[key][mask] = frozen[key]
            logger.debug("step %d: batch loss %.6g, lr %.3g", state.step, batch_losses.sum(), lr)

        mean_loss = float(sample_losses.mean())
        rows.append([epoch_offset + epoch + 1, mean_loss, lr])
        logger.info("epoch %d: mean loss %.6g", epoch_offset + epoch + 1, mean_loss)

    trained_loss, _ = block_loss(x_tilde, x_fp, weights, params, config.eps, targets)
    final_loss = trained_loss
    if config.check_zero_inclusion:
        for name, layer_params in params.items():
            check_zero_inclusion(derive_codebook(layer_params, config.eps)["C"], name)
    if trained_loss > initial_loss:
        logger.warning("trained loss %.6g is above the initial %.6g", trained_loss, initial_loss)
        if config.restore_initial:
            logger.warning("keeping the initial parameters")
            params, final_loss = initial_params, initial_loss
    logger.info("block optimized: loss %.6g -> %.6g", initial_loss, final_loss)
    return BlockReport(params, pd.DataFrame(rows, columns=TRACE_COLUMNS), initial_loss, trained_loss, final_loss)


def seeded_generators(seed):
    """
    Independent generators for initialization and batch order.

    Keeping the two streams apart lets evaluation replay the initialization
    without replaying training.
    """
    init_seed, shuffle_seed = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seed), np.random.default_rng(shuffle_seed)


def quantize_model(stack, calib, config):
    """
    Quantize a block stack one block at a time.

    Every block is initialized, optimized and double-quantized. The
    full-precision features then advance through the original block and the
    quantized features through the deployed (double-quantized) block.

    Parameters
    ----------
    stack : list
        BlockWeights in order.
    calib : CalibrationSet
        Raw calibration inputs.
    config : QuantConfig

    Returns
    -------
    report : ModelReport
        The artifact, per-block losses (initial, before and after double
        quantization), the concatenated trace and the features after the last
        block.
    """
    init_rng, shuffle_rng = seeded_generators(config.seed)
    layers, rows, traces = [], [], []
    for index, weights in enumerate(stack):
        logger.info("quantizing block %d of %d", index + 1, len(stack))
        params = init_block(weights, config, init_rng)
        report = optimize_block(weights, calib, config, params, shuffle_rng, epoch_offset=index * config.epochs)
        block_layers, deployed = apply_dq_block(report.params, weights, config, prefix="block{}.".format(index))
        layers.extend(block_layers)

        post_dq_loss, _ = reconstruction_loss(calib.tilde, calib.fp, weights, deployed)
        rows.append([index, report.initial_loss, report.final_loss, post_dq_loss])
        traces.append(report.trace)
        logger.info("block %d: initial %.6g, trained %.6g, deployed %.6g", index, report.initial_loss,
                    report.final_loss, post_dq_loss)

        calib = calib.propagated(block_forward(calib.fp, weights),
                                 block_forward(calib.tilde, weights.with_layers(deployed)))
        logger.info("propagated features through block %d", index)

    trace = pd.concat(traces, ignore_index=True) if traces else pd.DataFrame(columns=TRACE_COLUMNS)
    losses = pd.DataFrame(rows, columns=LOSS_COLUMNS)
    return ModelReport(QuantArtifact(config, layers), losses, trace, calib)


def evaluate_artifact(stack, calib, artifact, seed=0, v2_init="normal"):
    """
    Initial and deployed reconstruction loss of every block.

    The initial loss replays the initialization of quantize_model from
    ``seed``; the final loss uses the weights dequantized from ``artifact``.
    Both are measured on features propagated through the deployed blocks.

    Returns
    -------
    losses : pandas.DataFrame
        Columns ``block, initial_loss, final_loss``.
    """
    config = artifact.config.replace(seed=seed, v2_init=v2_init)
    dequantized = dequantize_artifact(artifact)
    init_rng, _ = seeded_generators(seed)
    rows = []
    for index, weights in enumerate(stack):
        prefix = "block{}.".format(index)
        missing = [prefix + name for name in LAYERS if prefix + name not in dequantized]
        if missing:
            raise LCQError("artifact has no layers {}".format(", ".join(missing)))
        deployed = {name: dequantized[prefix + name] for name in LAYERS}
        targets = block_targets(calib.tilde, calib.fp, weights)
        params = init_block(weights, config, init_rng)
        initial_loss, _ = block_loss(calib.tilde, calib.fp, weights, params, config.eps, targets)
        final_loss, _ = reconstruction_loss(calib.tilde, calib.fp, weights, deployed, targets)
        rows.append([index, initial_loss, final_loss])
        calib = calib.propagated(block_forward(calib.fp, weights),
                                 block_forward(calib.tilde, weights.with_layers(deployed)))
    return pd.DataFrame(rows, columns=["block", "initial_loss", "final_loss"])
