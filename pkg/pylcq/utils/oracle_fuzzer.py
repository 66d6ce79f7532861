"""Fuzzes the segmented quantizer against the exhaustive nearest-codeword scan."""

import itertools
import logging
import sys
from collections import namedtuple

import numpy as np

from pylcq.modules.quantizer import oracle_quantize, quantize_segmented, sort_codebook

logger = logging.getLogger(__name__)

BITS = (2, 3, 4)
RANKS = (1, 2, 3)
# Share of cases whose weight sits exactly on a midpoint of a dyadic codebook
TIE_FRACTION = 0.1

Mismatch = namedtuple("Mismatch", ["bits", "rank", "weight", "codebook", "segmented", "oracle"])


def random_codebooks(rng, count, bits, rank):
    """``count`` low-rank codebook rows ``S^T V - B`` of ``2**bits`` codewords."""
    n_q = 1 << bits
    S = rng.normal(0.0, 1.0, (count, rank, 1))
    V = rng.uniform(-1.0, 1.0, (count, rank, n_q))
    B = rng.normal(0.0, 0.1, (count, 1))
    return np.matmul(np.swapaxes(S, -1, -2), V)[:, 0, :] - B


def dyadic_ties(rng, count, bits):
    """
    Codebooks of distinct quarter-integers with a weight on one midpoint each.

    Midpoints of such rows are exact in binary floating point, so both
    quantizers see a genuine tie.
    """
    n_q = 1 << bits
    draws = [rng.choice(np.arange(-32, 33), n_q, replace=False) for _ in range(count)]
    rows = np.array(draws, dtype=np.float64).reshape(count, n_q) / 4.0
    ordered = np.sort(rows, axis=-1)
    segment = rng.integers(0, n_q - 1, count)
    index = np.arange(count)
    weights = (ordered[index, segment] + ordered[index, segment + 1]) / 2.0
    return weights, rows


def fuzz(cases=100000, seed=0):
    """
    Quantize random weights both ways and collect disagreements.

    Cases are split evenly over every (bits, rank) pair; a share of them are
    exact midpoint ties.

    Returns
    -------
    mismatches : list
        Mismatch records, empty when both quantizers agree everywhere.
    """
    rng = np.random.default_rng(seed)
    combos = list(itertools.product(BITS, RANKS))
    per_combo = -(-cases // len(combos))
    mismatches = []
    for bits, rank in combos:
        n_ties = int(per_combo * TIE_FRACTION)
        n_random = per_combo - n_ties
        codebooks = random_codebooks(rng, n_random, bits, rank)
        weights = rng.normal(0.0, 1.5, n_random)
        tie_weights, tie_codebooks = dyadic_ties(rng, n_ties, bits)
        codebooks = np.concatenate([codebooks, tie_codebooks])
        weights = np.concatenate([weights, tie_weights])[:, None]

        segmented = quantize_segmented(weights, sort_codebook(codebooks))
        oracle, _ = oracle_quantize(weights, codebooks)
        for row in np.flatnonzero(segmented[:, 0] != oracle[:, 0]):
            mismatches.append(Mismatch(bits, rank, float(weights[row, 0]), codebooks[row],
                                       float(segmented[row, 0]), float(oracle[row, 0])))
        logger.info("b=%d, N_D=%d: %d cases, %d mismatches", bits, rank, per_combo,
                    sum(1 for item in mismatches if (item.bits, item.rank) == (bits, rank)))
    return mismatches


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    cases = int(sys.argv[1]) if len(sys.argv) > 1 else 100000
    found = fuzz(cases)
    if found:
        print("First mismatch: {}".format(found[0]))
        sys.exit(1)
    print("No mismatches in {} cases.".format(cases))
