"""Summarizes the distribution of the stored scaling vectors of an artifact."""

import sys

import numpy as np
import pandas as pd

from pylcq.modules.doubleq import reconstruct_codebook
from pylcq.modules.storage import read_artifact


def scale_stats(artifact):
    """
    Descriptive statistics of S per layer and rank row.

    Parameters
    ----------
    artifact : QuantArtifact

    Returns
    -------
    stats : pandas.DataFrame
        One row per (layer, rank) with the pandas describe() columns plus the
        mean magnitude.
    """
    frames = []
    for layer in artifact.layers:
        S, _ = reconstruct_codebook(layer, artifact.config)
        for rank in range(S.shape[1]):
            values = pd.Series(S[:, rank, :].reshape(-1))
            summary = values.describe()
            summary["abs_mean"] = np.abs(values).mean()
            summary["layer"] = layer.name
            summary["rank"] = rank + 1
            frames.append(summary)
    columns = ["layer", "rank", "count", "mean", "std", "min", "25%", "50%", "75%", "max", "abs_mean"]
    return pd.DataFrame(frames, columns=columns).reset_index(drop=True)


def dump_scale_stats(artifact, filename):
    """Write scale_stats to a CSV file and return the table."""
    stats = scale_stats(artifact)
    stats.to_csv(filename, index=False)
    return stats


if __name__ == "__main__":
    if len(sys.argv) != 3:
        print("Usage: python -m pylcq.utils.scale_stats_dumper artifact.lcq1 stats.csv")
        sys.exit(2)
    stats = dump_scale_stats(read_artifact(sys.argv[1]), sys.argv[2])
    print(stats.to_string(index=False))
