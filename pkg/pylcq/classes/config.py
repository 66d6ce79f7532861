"""
The QuantConfig class: every hyperparameter of the quantization pipeline.
"""

import configparser as cp
import os.path
from collections import namedtuple
from dataclasses import asdict, dataclass, field, fields, replace

from pylcq.classes.errors import ConfigError

# Group-size sentinel: one group per output channel
CHANNEL = -1

V2_INITS = ("normal", "uniform", "rand")

Grouping = namedtuple("Grouping", ["group_size", "n_groups", "groups_per_subset", "n_subsets"])


@dataclass
class QuantConfig:
    """
    Hyperparameters of one quantization run.

    Example instantiation of a rank-2, 2-bit configuration:

    >>> config = QuantConfig(bits=2, group_size=128, rank=2)
    >>> config.n_q
    4
    """

    bits: int = field(default=2, metadata={"choices": range(2, 9)})
    group_size: int = field(default=128)
    rank: int = field(default=2)
    groups_per_subset: int = field(default=32)
    eps: float = field(default=1e-6)
    dq_bits_s: int = field(default=4, metadata={"choices": range(2, 9)})
    dq_bits_v: int = field(default=8, metadata={"choices": range(2, 9)})
    dq_group: int = field(default=16)
    epochs: int = field(default=10)
    batch_size: int = field(default=4)
    lr: float = field(default=0.01)
    weight_decay: float = field(default=0.0)
    beta1: float = field(default=0.9)
    beta2: float = field(default=0.999)
    adam_eps: float = field(default=1e-8)
    seed: int = field(default=0)
    v2_init: str = field(default="normal", metadata={"choices": V2_INITS})
    fix_rank1: bool = field(default=False)
    # Keep the starting parameters of a block whose training ends above its initial loss
    restore_initial: bool = field(default=False)
    check_zero_inclusion: bool = field(default=True)
    # Abort when the mean loss exceeds this multiple of the initial loss
    divergence_factor: float = field(default=1e3)

    def __post_init__(self):
        self.validate()

    @property
    def n_q(self):
        """Codebook size 2**bits."""
        return 1 << self.bits

    @property
    def implicit_v(self):
        """A rank-1 codebook keeps its uniform QPS, which is neither trained nor stored."""
        return self.rank == 1

    def validate(self):
        """
        Check every field, raising ConfigError on the first problem.
        """
        for item in fields(self):
            choices = item.metadata.get("choices")
            if choices is not None and getattr(self, item.name) not in choices:
                raise ConfigError("{} must be one of {}, got {!r}".format(
                    item.name, list(choices), getattr(self, item.name)))
        if self.rank < 1:
            raise ConfigError("rank must be at least 1, got {}".format(self.rank))
        if self.group_size != CHANNEL and self.group_size < 1:
            raise ConfigError("group_size must be positive or 'channel', got {}".format(self.group_size))
        if self.groups_per_subset < 1:
            raise ConfigError("groups_per_subset must be positive, got {}".format(self.groups_per_subset))
        if self.dq_group < 1:
            raise ConfigError("dq_group must be positive, got {}".format(self.dq_group))
        if self.eps <= 0:
            raise ConfigError("eps must be positive, got {}".format(self.eps))
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative, got {}".format(self.epochs))
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive, got {}".format(self.batch_size))
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.divergence_factor <= 1:
            raise ConfigError("divergence_factor must exceed 1")

    def replace(self, **changes):
        """Copy of this config with ``changes`` applied and validated."""
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


def parse_group_size(text):
    """Turn ``"channel"`` or an integer string into a group size."""
    if str(text).strip().lower() == "channel":
        return CHANNEL
    try:
        return int(text)
    except ValueError:
        raise ConfigError("group size must be an integer or 'channel', got {!r}".format(text))


def load_config(filename, section="quantize"):
    """
    Parses an INI file into keyword arguments for QuantConfig.

    Parameters
    ----------
    filename : str
        Path of the INI file.
    section : str
        Section holding the keys, named like the QuantConfig fields.

    Returns
    -------
    values : dictionary
        Field name mapped to the parsed value. Only keys present in the
        file are returned so that command-line flags can override them.
    """
    if not os.path.isfile(filename):
        raise ConfigError("could not find config file {}".format(filename))
    config = cp.ConfigParser()
    config.read(filename)
    if not config.has_section(section):
        raise ConfigError("config file {} has no [{}] section".format(filename, section))

    types = {item.name: item.type for item in fields(QuantConfig)}
    values = {}
    for key, raw in config.items(section):
        if key not in types:
            raise ConfigError("unknown config key '{}'".format(key))
        try:
            if key == "group_size":
                values[key] = parse_group_size(raw)
            elif types[key] in (bool, "bool"):
                values[key] = config.getboolean(section, key)
            elif types[key] in (int, "int"):
                values[key] = config.getint(section, key)
            elif types[key] in (float, "float"):
                values[key] = config.getfloat(section, key)
            else:
                values[key] = raw.strip()
        except ValueError as error:
            raise ConfigError("bad value for '{}': {}".format(key, error))
    return values


def layer_grouping(config, shape):
    """
    How a layer of shape (D_in, D_out) splits into groups and subsets.

    The layer is flattened output-channel-major (``W.T`` row-major) and cut
    into groups of G consecutive weights; G = D_in for CHANNEL.

    Returns
    -------
    grouping : Grouping
        ``(group_size, n_groups, groups_per_subset, n_subsets)``.
    """
    rows, cols = shape
    group_size = rows if config.group_size == CHANNEL else config.group_size
    total = rows * cols
    if total % group_size:
        raise ConfigError("group size {} does not divide a layer of {}x{}".format(group_size, rows, cols))
    n_groups = total // group_size
    per_subset = min(config.groups_per_subset, n_groups)
    if n_groups % per_subset:
        raise ConfigError("{} groups per subset does not divide the {} groups of a {}x{} layer".format(
            per_subset, n_groups, rows, cols))
    return Grouping(group_size, n_groups, per_subset, n_groups // per_subset)
