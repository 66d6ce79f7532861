"""Python package for low-rank codebook quantization of transformer weights"""

# Add imports here
from pylcq.classes.config import CHANNEL, QuantConfig
from pylcq.classes.errors import LCQError

from ._version import __version__
