"""Compares analytic gradients against central finite differences."""

import logging
import sys

import numpy as np
import pandas as pd

from pylcq.classes.config import QuantConfig
from pylcq.classes.graph import Graph
from pylcq.modules import numerics
from pylcq.modules.block import gen_calibration
from pylcq.modules.initializer import init_block
from pylcq.modules.trainer import block_targets, build_loss_graph

logger = logging.getLogger(__name__)

COLUMNS = ["check", "coordinate", "analytic", "numeric", "rel_error", "passed"]
# Desk-sized problem the composite check runs on
TINY_MODEL = {"samples": 2, "seq_len": 4, "dim": 8, "ff_dim": 16, "heads": 2, "blocks": 1}
TINY_CONFIG = {"bits": 2, "group_size": 8, "rank": 2, "groups_per_subset": 2}
# Spread of the random moves applied to the initialized leaves
PERTURBATION = 0.3


def primitive_cases():
    """
    Scalar test functions, one per differentiable primitive.

    Returns
    -------
    cases : dict
        ``{name: (input shape, builder)}`` where ``builder(graph, x, rng)``
        records the primitive applied to the leaf ``x``.
    """
    return {
        "add": ((2, 3), lambda g, x, rng: x + rng.normal(size=3)),
        "subtract": ((2, 3), lambda g, x, rng: rng.normal(size=(2, 3)) - x),
        "multiply": ((2, 3), lambda g, x, rng: x * x),
        "broadcast": ((1, 3), lambda g, x, rng: g.broadcast(x, (4, 3))),
        "matmul": ((2, 3), lambda g, x, rng: x @ rng.normal(size=(3, 4))),
        "transpose": ((2, 3), lambda g, x, rng: g.transpose(x) @ rng.normal(size=(2, 2))),
        "tanh": ((2, 3), lambda g, x, rng: g.tanh(x)),
        "softmax": ((3, 4), lambda g, x, rng: g.softmax(x)),
        "layer_norm": ((3, 5), lambda g, x, rng: g.layer_norm(x)),
        "gelu": ((2, 3), lambda g, x, rng: g.gelu(x)),
        "clip": ((2, 3), lambda g, x, rng: g.clip(x, -0.5, 0.5)),
        "reduce_sum": ((3, 4), lambda g, x, rng: g.reduce_sum(x, axis=0)),
        "squared_norm": ((2, 3), lambda g, x, rng: g.squared_norm(x)),
    }


def away_from_kinks(shape, rng):
    """Inputs at least 0.05 away from the clip bounds used by the primitive cases."""
    x = rng.uniform(-1.0, 1.0, shape)
    near = np.abs(np.abs(x) - 0.5) < 0.05
    return np.where(near, x * 0.5, x)


def check_primitives(seed=0, step=1e-6, tolerance=1e-4):
    """
    Finite-difference check of every primitive.

    Returns
    -------
    results : pandas.DataFrame
        One row per primitive holding its worst coordinate.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for name, (shape, builder) in primitive_cases().items():
        graph = Graph()
        x = graph.leaf("x", away_from_kinks(shape, rng))
        out = builder(graph, x, rng)
        projection = rng.normal(size=out.shape)
        graph.output("f", graph.reduce_sum(out * projection))
        analytic = numerics.backward(graph, "f")["x"]
        point = x.value.copy()

        def function(values):
            return numerics.forward_eval(graph, {"x": values})["f"]

        numeric = numerics.central_difference(function, point, step)
        numerics.forward_eval(graph, {"x": point})
        errors = numerics.relative_error(analytic.reshape(-1), numeric)
        worst = int(np.argmax(errors))
        rows.append([name, worst, analytic.reshape(-1)[worst], numeric[worst], errors[worst],
                     bool(errors[worst] <= tolerance)])
    return pd.DataFrame(rows, columns=COLUMNS)


def tiny_problem(seed=0):
    """
    Loss graph of a small block with perturbed codebook leaves.

    Returns
    -------
    graph : Graph
        Recorded loss with output ``loss``.
    """
    calib, stack = gen_calibration(seed=seed, **TINY_MODEL)
    weights = stack[0]
    config = QuantConfig(seed=seed, **TINY_CONFIG)
    rng = np.random.default_rng(seed)
    params = init_block(weights, config, rng)
    for layer_params in params.values():
        for leaf in layer_params.leaves().values():
            leaf += rng.normal(0.0, PERTURBATION, leaf.shape)
    t_fp, t_tilde = block_targets(calib.tilde, calib.fp, weights)
    graph, _ = build_loss_graph(weights, params, calib.tilde, t_fp, t_tilde, config.eps)
    return graph


def check_ste(seed=0, points=100, step=1e-6, tolerance=1e-4):
    """
    Compare the straight-through gradient of the block loss with central
    differences of its frozen-step surrogate.

    Coordinates with the largest analytic gradient are visited first; a
    coordinate whose perturbation moves any clip argument across 0 or 1 is
    skipped until ``points`` usable coordinates have been compared.

    Returns
    -------
    results : pandas.DataFrame
        One row per compared coordinate.
    """
    graph = tiny_problem(seed)
    grads = numerics.backward(graph, "loss")
    base = {name: leaf.value.copy() for name, leaf in graph.leaves.items()}

    candidates = []
    for name, grad in grads.items():
        for index in np.argsort(-np.abs(grad.reshape(-1)), kind="stable"):
            candidates.append((abs(grad.reshape(-1)[index]), name, int(index)))
    candidates.sort(key=lambda item: -item[0])

    def evaluate(name, values):
        loss = numerics.forward_eval(graph, {name: values}, frozen=True)["loss"]
        return float(loss), graph.region_changed

    rows, skipped = [], 0
    for _, name, index in candidates:
        if len(rows) >= points:
            break
        point = base[name].copy()
        flat = point.reshape(-1)
        original = flat[index]
        flat[index] = original + step
        upper, changed_up = evaluate(name, point)
        flat[index] = original - step
        lower, changed_down = evaluate(name, point)
        numerics.forward_eval(graph, {name: base[name]}, frozen=True)
        if changed_up or changed_down:
            skipped += 1
            continue
        numeric = (upper - lower) / (2.0 * step)
        analytic = grads[name].reshape(-1)[index]
        error = float(numerics.relative_error(analytic, numeric))
        rows.append(["{}[{}]".format(name, index), index, analytic, numeric, error, error <= tolerance])

    # Leave the graph with its traced values
    numerics.forward_eval(graph, base)
    logger.info("compared %d coordinates, skipped %d that left their STE region", len(rows), skipped)
    return pd.DataFrame(rows, columns=COLUMNS)


def run_checks(seed=0, points=100, tolerance=1e-4):
    """Primitive and composite checks in one table."""
    return pd.concat([check_primitives(seed, tolerance=tolerance), check_ste(seed, points, tolerance=tolerance)],
                     ignore_index=True)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    results = run_checks(seed)
    print(results.to_string(index=False))
    print("\nWorst relative error: {:.3e}".format(results["rel_error"].max()))
    sys.exit(0 if results["passed"].all() else 1)
