"""Dynamic topic attention model: drift-aware document regression toolkit."""

__version__ = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1
