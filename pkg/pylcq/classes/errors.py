"""Exceptions raised across the pylcq package."""


class LCQError(Exception):
    """Base class for every error raised by pylcq."""


class ConfigError(LCQError):
    """An invalid hyperparameter or an inconsistent layer grouping."""


class ShapeError(LCQError, ValueError):
    """Operands whose shapes cannot be combined."""


class NumericsError(LCQError):
    """A numerical failure such as a non-finite node output."""


class DivergenceError(NumericsError):
    """
    The block loss exceeded the divergence threshold during optimization.

    Parameters
    ----------
    message : str
        Human readable description.
    trace : pandas.DataFrame
        The per-epoch loss trace collected before the abort.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class QuantizerError(LCQError):
    """A codebook that violates the quantizer preconditions."""


class CodebookError(LCQError):
    """A codebook row lost its exact zero."""


class BitPackError(LCQError, ValueError):
    """An index that does not fit into the requested bit-width."""


class FormatError(LCQError):
    """
    A binary file failed validation.

    Parameters
    ----------
    message : str
        What was wrong.
    offset : int
        Byte offset of the field that failed.
    """

    def __init__(self, message, offset):
        super().__init__("{} (at byte offset {})".format(message, offset))
        self.offset = offset


class TensorFileError(FormatError):
    """An invalid LCQT tensor container."""


class ArtifactFormatError(FormatError):
    """An invalid LCQ1 quantization artifact."""
