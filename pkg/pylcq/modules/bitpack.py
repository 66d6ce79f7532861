"""
LSB-first packing of small unsigned integers into byte streams.

Index ``j`` of a packed stream occupies bits ``[j*b, (j+1)*b)``, counting from
the least significant bit of the first byte. The final byte is zero padded.
"""

import numpy as np

from pylcq.classes.errors import BitPackError


def packed_nbytes(count, bits):
    """Bytes needed to hold ``count`` indices of ``bits`` bits each."""
    return (int(count) * int(bits) + 7) // 8


def pack_indices(indices, bits):
    """
    Pack indices into a byte string.

    Parameters
    ----------
    indices : array_like
        Flat sequence of non-negative integers below ``2**bits``.
    bits : int
        Width of every index, 1 to 16.

    Returns
    -------
    packed : bytes
        ``packed_nbytes(len(indices), bits)`` bytes.

    Example:

    >>> pack_indices([3, 0, 1, 2], 2)
    b'\\x93'
    """
    if not 1 <= bits <= 16:
        raise BitPackError("bit-width {} is outside 1..16".format(bits))
    indices = np.asarray(indices).reshape(-1)
    if indices.size == 0:
        return b""
    if not np.issubdtype(indices.dtype, np.integer):
        raise BitPackError("indices must be integers, got {}".format(indices.dtype))
    if indices.min() < 0 or indices.max() >= (1 << bits):
        raise BitPackError("index {} does not fit in {} bits".format(
            indices.max() if indices.max() >= (1 << bits) else indices.min(), bits))

    # One row of bits per index, low bit first
    shifts = np.arange(bits, dtype=np.uint32)
    stream = ((indices.astype(np.uint32)[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(stream.reshape(-1), bitorder="little").tobytes()


def unpack_indices(packed, count, bits):
    """
    Inverse of pack_indices.

    Parameters
    ----------
    packed : bytes
        Packed stream, at least ``packed_nbytes(count, bits)`` long.
    count : int
        Number of indices to recover.
    bits : int
        Width of every index.

    Returns
    -------
    indices : numpy.ndarray
        int64 array of length ``count``.
    """
    if not 1 <= bits <= 16:
        raise BitPackError("bit-width {} is outside 1..16".format(bits))
    needed = packed_nbytes(count, bits)
    buffer = np.frombuffer(bytes(packed), dtype=np.uint8)
    if buffer.size < needed:
        raise BitPackError("{} bytes cannot hold {} indices of {} bits".format(buffer.size, count, bits))
    if count == 0:
        return np.zeros(0, dtype=np.int64)

    stream = np.unpackbits(buffer[:needed], bitorder="little")[:count * bits]
    weights = np.left_shift(np.int64(1), np.arange(bits, dtype=np.int64))
    return stream.reshape(count, bits).astype(np.int64) @ weights
