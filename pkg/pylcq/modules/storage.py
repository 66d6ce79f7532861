"""
The LCQ1 artifact format and its storage accountant.

Layout (little-endian, every section byte aligned):

    magic "LCQ1", u32 version
    u32 b, G (0xFFFFFFFF for per-channel groups), N_D, N_G, N_Q,
        dq_bits_S, dq_bits_V, dq_group, layer count
    per layer: u32 name length, UTF-8 name, u32 rows, u32 cols, u32 subsets
        per subset: S1 float16[N_G]
                    S dq section over (N_D - 1) * N_G values
                    V dq section over N_D * N_Q values (absent when N_D = 1)
                    B indices packed at b bits [N_G]
                    Z indices packed at b bits [N_G * G]
    dq section: float16 scales[ceil(n / dq_group)], zero-codes packed at
        dq_bits, codes packed at dq_bits
"""

import logging
import os

import numpy as np

from pylcq.classes.artifact import DQParams, QuantArtifact, QuantizedLayer
from pylcq.classes.config import CHANNEL, QuantConfig, layer_grouping
from pylcq.classes.errors import ArtifactFormatError, ConfigError, LCQError
from pylcq.modules.bitpack import pack_indices, packed_nbytes, unpack_indices
from pylcq.modules.doubleq import check_layer_grouping, reconstruct_layer
from pylcq.modules.tensor_io import ByteCursor, encode_name, u32

logger = logging.getLogger(__name__)

MAGIC = b"LCQ1"
VERSION = 1
CHANNEL_CODE = 0xFFFFFFFF
# magic + version + nine header words
HEADER_BYTES = 4 + 4 + 4 * 9


def header_bytes(config, n_layers):
    group = CHANNEL_CODE if config.group_size == CHANNEL else config.group_size
    words = [config.bits, group, config.rank, config.groups_per_subset, config.n_q, config.dq_bits_s,
             config.dq_bits_v, config.dq_group, n_layers]
    return MAGIC + u32(VERSION) + b"".join(u32(word) for word in words)


def dq_section_bytes(params):
    return (params.scales.astype("<f2").tobytes() + pack_indices(params.zeros, params.bits)
            + pack_indices(params.codes, params.bits))


def dq_section_nbytes(count, bits, group):
    """Bytes of a dq section over ``count`` values."""
    n_groups = -(-count // group)
    return 2 * n_groups + packed_nbytes(n_groups, bits) + packed_nbytes(count, bits)


def artifact_to_bytes(artifact):
    """Serialize a QuantArtifact."""
    config = artifact.config
    chunks = [header_bytes(config, len(artifact.layers))]
    for layer in artifact.layers:
        check_layer_grouping(layer, config)
        rows, cols = layer.shape
        chunks.append(encode_name(layer.name) + u32(rows) + u32(cols) + u32(layer.n_subsets))
        for subset in range(layer.n_subsets):
            chunks.append(layer.s1[subset].astype("<f2").tobytes())
            chunks.append(dq_section_bytes(layer.s_dq[subset]))
            if not config.implicit_v:
                chunks.append(dq_section_bytes(layer.v_dq[subset]))
            chunks.append(pack_indices(layer.b_idx[subset], config.bits))
            chunks.append(pack_indices(layer.z[subset], config.bits))
    return b"".join(chunks)


def _read_dq(cursor, count, bits, group, what):
    n_groups = -(-count // group)
    scales = cursor.array("<f2", n_groups, what + " scales")
    zeros = unpack_indices(cursor.take(packed_nbytes(n_groups, bits), what + " zero-codes"), n_groups, bits)
    codes = unpack_indices(cursor.take(packed_nbytes(count, bits), what + " codes"), count, bits)
    return DQParams(scales, zeros, codes, bits, group)


def _read_header(cursor):
    if cursor.take(4, "magic") != MAGIC:
        raise ArtifactFormatError("bad magic, expected {!r}".format(MAGIC), 0)
    version = cursor.u32("version")
    if version != VERSION:
        raise ArtifactFormatError("unsupported version {}".format(version), 4)
    start = cursor.offset
    bits, group, rank, n_g, n_q, dq_s, dq_v, dq_group, n_layers = (
        cursor.u32(name) for name in ("b", "G", "N_D", "N_G", "N_Q", "dq_bits_S", "dq_bits_V", "dq_group",
                                      "layer count"))
    if n_q != 1 << bits:
        raise ArtifactFormatError("N_Q={} does not match b={}".format(n_q, bits), start + 16)
    try:
        config = QuantConfig(bits=bits, group_size=CHANNEL if group == CHANNEL_CODE else group, rank=rank,
                             groups_per_subset=n_g, dq_bits_s=dq_s, dq_bits_v=dq_v, dq_group=dq_group)
    except ConfigError as error:
        raise ArtifactFormatError("invalid header: {}".format(error), start)
    return config, n_layers


def artifact_from_bytes(data):
    """
    Parse and validate an LCQ1 artifact.

    Raises
    ------
    ArtifactFormatError
        On a bad magic, version or header field, truncation, inconsistent
        section lengths or trailing bytes, naming the offending offset.
    """
    cursor = ByteCursor(data, ArtifactFormatError)
    config, n_layers = _read_header(cursor)
    layers = []
    for _ in range(n_layers):
        name = cursor.name("layer")
        shape_offset = cursor.offset
        rows, cols, n_v = cursor.u32("rows"), cursor.u32("cols"), cursor.u32("subset count")
        try:
            grouping = layer_grouping(config, (rows, cols))
        except ConfigError as error:
            raise ArtifactFormatError("layer '{}': {}".format(name, error), shape_offset)
        if n_v != grouping.n_subsets:
            raise ArtifactFormatError("layer '{}' has {} subsets, its grouping needs {}".format(
                name, n_v, grouping.n_subsets), shape_offset + 8)
        n_g, group_size = grouping.groups_per_subset, grouping.group_size
        s1, s_dq, v_dq, b_idx, z = [], [], [], [], []
        for subset in range(n_v):
            what = "{} subset {}".format(name, subset)
            s1.append(cursor.array("<f2", n_g, what + " S1"))
            s_dq.append(_read_dq(cursor, (config.rank - 1) * n_g, config.dq_bits_s, config.dq_group, what + " S"))
            if config.implicit_v:
                v_dq.append(DQParams.empty(config.dq_bits_v, config.dq_group))
            else:
                v_dq.append(_read_dq(cursor, config.rank * config.n_q, config.dq_bits_v, config.dq_group,
                                     what + " V"))
            b_idx.append(unpack_indices(cursor.take(packed_nbytes(n_g, config.bits), what + " B"), n_g, config.bits))
            count = n_g * group_size
            z.append(unpack_indices(cursor.take(packed_nbytes(count, config.bits), what + " Z"), count,
                                    config.bits).reshape(n_g, group_size))
        layers.append(QuantizedLayer(name, (rows, cols), np.array(s1).reshape(n_v, n_g), s_dq, v_dq,
                                     np.array(b_idx).reshape(n_v, n_g), np.array(z).reshape(n_v, n_g, group_size)))
    cursor.expect_end()
    return QuantArtifact(config, layers)


def write_artifact(path, artifact):
    """Write ``artifact`` to ``path`` and return the number of bytes written."""
    data = artifact_to_bytes(artifact)
    with open(path, "wb") as handle:
        handle.write(data)
    logger.info("wrote artifact with %d layers (%d bytes) to %s", len(artifact.layers), len(data), path)
    return len(data)


def read_artifact(path):
    """Read an LCQ1 file."""
    if not os.path.isfile(path):
        raise FileNotFoundError("artifact {} does not exist".format(path))
    with open(path, "rb") as handle:
        return artifact_from_bytes(handle.read())


def layer_bits(config, shape):
    """
    Stored bits of one layer under the retention accounting.

    Indices (b per weight), per group a float16 S₁, the dq codes of the
    higher-rank S entries and the b-bit offset index, per subset the dq codes
    of V unless implicit, and dq metadata ``(16 + dq_bits) / dq_group`` per
    dq-coded value.
    """
    grouping = layer_grouping(config, shape)
    n_weights = shape[0] * shape[1]
    n_s = (config.rank - 1) * grouping.n_groups
    n_v = 0 if config.implicit_v else grouping.n_subsets * config.rank * config.n_q
    return (n_weights * config.bits
            + grouping.n_groups * (16 + config.bits)
            + n_s * config.dq_bits_s
            + n_v * config.dq_bits_v
            + n_s * (16 + config.dq_bits_s) / config.dq_group
            + n_v * (16 + config.dq_bits_v) / config.dq_group)


def retention_rate(config, shapes):
    """
    Stored bits over the bits of the same weights in 16-bit floats.

    Parameters
    ----------
    config : QuantConfig
    shapes : list
        (D_in, D_out) of every quantized layer.

    Returns
    -------
    rate : float
        In (0, 1] for any practical configuration.

    Example:

    >>> round(retention_rate(QuantConfig(rank=1), [(4096, 4096)]), 4)
    0.1338
    """
    shapes = [tuple(shape) for shape in shapes]
    if not shapes:
        raise LCQError("retention rate of an empty model is undefined")
    total_bits = sum(layer_bits(config, shape) for shape in shapes)
    total_weights = sum(rows * cols for rows, cols in shapes)
    return total_bits / (16.0 * total_weights)


def layer_nbytes(config, name, shape):
    """Exact bytes of one layer record, name and shape fields included."""
    grouping = layer_grouping(config, shape)
    n_g = grouping.groups_per_subset
    per_subset = (2 * n_g
                  + dq_section_nbytes((config.rank - 1) * n_g, config.dq_bits_s, config.dq_group)
                  + (0 if config.implicit_v else dq_section_nbytes(config.rank * config.n_q, config.dq_bits_v,
                                                                     config.dq_group))
                  + packed_nbytes(n_g, config.bits)
                  + packed_nbytes(n_g * grouping.group_size, config.bits))
    return 4 + len(name.encode("utf-8")) + 12 + grouping.n_subsets * per_subset


def artifact_nbytes(config, layers):
    """
    Exact size of the LCQ1 file holding ``layers``.

    Parameters
    ----------
    layers : list
        ``(name, (D_in, D_out))`` pairs in storage order.
    """
    return HEADER_BYTES + sum(layer_nbytes(config, name, shape) for name, shape in layers)


def dequantize_artifact(artifact):
    """``{layer name: W_Q}`` of every stored layer."""
    return {layer.name: reconstruct_layer(layer, artifact.config) for layer in artifact.layers}
