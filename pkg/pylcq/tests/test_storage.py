"""
Tests of bit packing, the LCQ1 artifact format and the storage accountant.
"""

import os

import numpy as np
import pytest

from pylcq.classes.artifact import QuantArtifact
from pylcq.classes.config import CHANNEL, QuantConfig
from pylcq.classes.errors import ArtifactFormatError, BitPackError, LCQError
from pylcq.modules import storage
from pylcq.modules.bitpack import pack_indices, packed_nbytes, unpack_indices
from pylcq.modules.doubleq import apply_dq_block
from pylcq.modules.initializer import init_block
from pylcq.modules.tensor_io import u32


def test_pack_example():
    assert pack_indices([3, 0, 1, 2], 2) == b"\x93"
    np.testing.assert_array_equal(unpack_indices(b"\x93", 4, 2), [3, 0, 1, 2])


def test_pack_pads_final_byte():
    packed = pack_indices(np.arange(8), 3)
    assert len(packed) == 3 == packed_nbytes(8, 3)
    assert len(pack_indices(np.arange(3), 3)) == 2


@pytest.mark.parametrize("bits", [1, 2, 3, 5, 8, 13])
def test_pack_round_trip(rng, bits):
    indices = rng.integers(0, 1 << bits, size=101)
    np.testing.assert_array_equal(unpack_indices(pack_indices(indices, bits), 101, bits), indices)


def test_pack_errors():
    with pytest.raises(BitPackError):
        pack_indices([4], 2)
    with pytest.raises(BitPackError):
        pack_indices([-1], 2)
    with pytest.raises(BitPackError):
        pack_indices([0.5], 2)
    with pytest.raises(BitPackError):
        pack_indices([1], 0)
    with pytest.raises(BitPackError):
        unpack_indices(b"\x00", 5, 2)
    assert pack_indices([], 3) == b""


@pytest.mark.parametrize("changes, shape, expected", [
    ({"rank": 1}, (4096, 4096), 0.1338),
    ({"rank": 2}, (4096, 4096), 0.1375),
    ({"bits": 3, "rank": 1}, (4096, 4096), 0.1968),
    ({"bits": 3, "rank": 2}, (4096, 4096), 0.2017),
    ({"bits": 3, "rank": 1, "group_size": CHANNEL}, (4096, 4096), 0.1878),
])
def test_retention_rate_constants(changes, shape, expected):
    assert storage.retention_rate(QuantConfig(**changes), [shape]) == pytest.approx(expected, abs=5e-4)


def test_retention_rate_grows_with_rank_and_bits():
    shapes = [(512, 512), (512, 2048), (2048, 512)]
    rates = [storage.retention_rate(QuantConfig(rank=rank), shapes) for rank in (1, 2, 3)]
    assert rates[0] < rates[1] < rates[2]
    assert storage.retention_rate(QuantConfig(bits=3), shapes) > rates[1]
    assert storage.retention_rate(QuantConfig(group_size=64), shapes) > rates[1]


def test_retention_rate_of_empty_model():
    with pytest.raises(LCQError):
        storage.retention_rate(QuantConfig(), [])


@pytest.fixture
def artifact(tiny_model, tiny_config, rng):
    """Double-quantized initialization of both tiny blocks."""
    _, stack = tiny_model
    layers, quantized = [], {}
    for index, weights in enumerate(stack):
        block_layers, deployed = apply_dq_block(init_block(weights, tiny_config, rng), weights, tiny_config,
                                                prefix="block{}.".format(index))
        layers.extend(block_layers)
        quantized.update({"block{}.{}".format(index, name): W_Q for name, W_Q in deployed.items()})
    result = QuantArtifact(tiny_config, layers)
    result.deployed = quantized
    return result


def test_artifact_round_trip(tmpdir, artifact):
    path = str(tmpdir.join("model.lcq1"))
    written = storage.write_artifact(path, artifact)
    assert written == os.path.getsize(path)
    assert written == storage.artifact_nbytes(artifact.config, artifact.shapes())
    loaded = storage.read_artifact(path)
    assert loaded == artifact
    assert loaded.names() == artifact.names()
    assert loaded.config.bits == 2 and loaded.config.group_size == 8 and loaded.config.rank == 2
    assert loaded.config.groups_per_subset == 2


def test_dequantized_artifact_is_bit_exact(artifact):
    loaded = storage.artifact_from_bytes(storage.artifact_to_bytes(artifact))
    dequantized = storage.dequantize_artifact(loaded)
    assert sorted(dequantized) == sorted(artifact.deployed)
    for name, W_Q in artifact.deployed.items():
        np.testing.assert_array_equal(dequantized[name], W_Q)


def test_layer_nbytes_sum(artifact):
    data = storage.artifact_to_bytes(artifact)
    sizes = [storage.layer_nbytes(artifact.config, name, shape) for name, shape in artifact.shapes()]
    assert len(data) == storage.HEADER_BYTES + sum(sizes)


def test_empty_artifact():
    config = QuantConfig(rank=1, group_size=CHANNEL)
    data = storage.artifact_to_bytes(QuantArtifact(config))
    assert len(data) == storage.HEADER_BYTES == 44
    loaded = storage.artifact_from_bytes(data)
    assert len(loaded) == 0
    assert loaded.config.implicit_v
    assert loaded.config.group_size == CHANNEL


def test_header_words(artifact):
    data = storage.artifact_to_bytes(artifact)
    words = np.frombuffer(data[8:storage.HEADER_BYTES], dtype="<u4")
    np.testing.assert_array_equal(words, [2, 8, 2, 2, 4, 4, 8, 16, 12])


def test_rank_one_artifact_omits_qps(tiny_model, rng):
    _, stack = tiny_model
    sizes = []
    for rank in (1, 2):
        config = QuantConfig(bits=2, group_size=8, rank=rank, groups_per_subset=2)
        artifact = QuantArtifact(config, apply_dq_block(init_block(stack[0], config, rng), stack[0], config)[0])
        data = storage.artifact_to_bytes(artifact)
        assert storage.artifact_from_bytes(data) == artifact
        assert len(data) == storage.artifact_nbytes(config, artifact.shapes())
        sizes.append(len(data))
    assert sizes[0] < sizes[1]


@pytest.mark.parametrize("offset, patch", [
    (0, b"LCQ2"),
    (4, u32(2)),
    (24, u32(8)),
])
def test_corrupt_header(artifact, offset, patch):
    data = bytearray(storage.artifact_to_bytes(artifact))
    data[offset:offset + len(patch)] = patch
    with pytest.raises(ArtifactFormatError) as info:
        storage.artifact_from_bytes(bytes(data))
    assert info.value.offset == offset


def test_truncated_and_trailing(artifact):
    data = storage.artifact_to_bytes(artifact)
    with pytest.raises(ArtifactFormatError):
        storage.artifact_from_bytes(data[:-1])
    with pytest.raises(ArtifactFormatError):
        storage.artifact_from_bytes(data[:30])
    with pytest.raises(ArtifactFormatError) as info:
        storage.artifact_from_bytes(data + b"\x00")
    assert info.value.offset == len(data)


def test_read_missing_artifact(tmpdir):
    with pytest.raises(FileNotFoundError):
        storage.read_artifact(str(tmpdir.join("absent.lcq1")))
