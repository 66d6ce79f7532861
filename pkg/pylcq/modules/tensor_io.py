"""
Reader and writer of the LCQT tensor container.

Layout (little-endian): magic ``LCQT``, u32 version, u32 tensor count, then per
tensor: u32 name length, UTF-8 name, u8 dtype code, u8 rank, u64 dims[rank],
raw row-major payload.
"""

import logging
import os

import numpy as np

from pylcq.classes.errors import TensorFileError

logger = logging.getLogger(__name__)

MAGIC = b"LCQT"
VERSION = 1

# dtype code -> numpy little-endian dtype
DTYPES = {
    0: np.dtype("<f8"),
    1: np.dtype("<f4"),
    2: np.dtype("<f2"),
    3: np.dtype("u1"),
}
CODES = {dtype: code for code, dtype in DTYPES.items()}


def u32(value):
    return np.array([value], dtype="<u4").tobytes()


def u64(value):
    return np.array([value], dtype="<u8").tobytes()


def u8(value):
    return np.array([value], dtype="u1").tobytes()


class ByteCursor:
    """
    Sequential reader over a byte string that reports failures with offsets.

    Parameters
    ----------
    data : bytes
        The whole file.
    error : type
        FormatError subclass raised on truncation or bad fields.
    """

    def __init__(self, data, error):
        self.data = bytes(data)
        self.offset = 0
        self.error = error

    def remaining(self):
        return len(self.data) - self.offset

    def take(self, count, what):
        """Return the next ``count`` bytes."""
        if count < 0 or self.offset + count > len(self.data):
            raise self.error("truncated {}: need {} bytes, {} left".format(what, count, self.remaining()),
                             self.offset)
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def array(self, dtype, count, what):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(int(count) * dtype.itemsize, what), dtype=dtype).copy()

    def u8(self, what):
        return int(self.array("u1", 1, what)[0])

    def u32(self, what):
        return int(self.array("<u4", 1, what)[0])

    def u64(self, what):
        return int(self.array("<u8", 1, what)[0])

    def name(self, what):
        length = self.u32(what + " name length")
        start = self.offset
        raw = self.take(length, what + " name")
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise self.error("{} name is not UTF-8".format(what), start)

    def expect_end(self):
        if self.remaining():
            raise self.error("{} trailing bytes".format(self.remaining()), self.offset)


def encode_name(name):
    raw = name.encode("utf-8")
    return u32(len(raw)) + raw


def tensors_to_bytes(tensors):
    """
    Serialize an ordered mapping of arrays.

    Parameters
    ----------
    tensors : dict
        ``{name: numpy.ndarray}``; dtypes float64, float32, float16 or uint8.

    Returns
    -------
    data : bytes
    """
    chunks = [MAGIC, u32(VERSION), u32(len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<") if array.dtype.itemsize > 1 else array.dtype
        if dtype not in CODES:
            raise TensorFileError("tensor '{}' has unsupported dtype {}".format(name, array.dtype), 0)
        chunks.append(encode_name(name))
        chunks.append(u8(CODES[dtype]) + u8(array.ndim))
        chunks.extend(u64(dim) for dim in array.shape)
        chunks.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    return b"".join(chunks)


def tensors_from_bytes(data):
    """
    Parse an LCQT container.

    Returns
    -------
    tensors : dict
        ``{name: numpy.ndarray}`` in file order.
    """
    cursor = ByteCursor(data, TensorFileError)
    if cursor.take(4, "magic") != MAGIC:
        raise TensorFileError("bad magic, expected {!r}".format(MAGIC), 0)
    version = cursor.u32("version")
    if version != VERSION:
        raise TensorFileError("unsupported version {}".format(version), 4)
    count = cursor.u32("tensor count")

    tensors = {}
    for _ in range(count):
        name = cursor.name("tensor")
        code_offset = cursor.offset
        code = cursor.u8("dtype code")
        if code not in DTYPES:
            raise TensorFileError("tensor '{}' has unknown dtype code {}".format(name, code), code_offset)
        rank = cursor.u8("rank")
        shape = tuple(cursor.u64("dimension") for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        tensors[name] = cursor.array(DTYPES[code], size, "payload of '{}'".format(name)).reshape(shape)
    cursor.expect_end()
    return tensors


def write_tensors(path, tensors):
    """Write ``tensors`` to an LCQT file."""
    data = tensors_to_bytes(tensors)
    with open(path, "wb") as handle:
        handle.write(data)
    logger.info("wrote %d tensors (%d bytes) to %s", len(tensors), len(data), path)


def read_tensors(path):
    """Read an LCQT file into a ``{name: array}`` dict."""
    if not os.path.isfile(path):
        raise FileNotFoundError("tensor file {} does not exist".format(path))
    with open(path, "rb") as handle:
        return tensors_from_bytes(handle.read())
