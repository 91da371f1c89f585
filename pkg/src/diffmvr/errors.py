"""Exception types shared across the package.

Every failure mode maps onto one of these so callers (and the CLI exit-code
mapping) can tell configuration mistakes, violated call contracts, numeric
blow-ups, and malformed files apart without string-matching messages.
"""


class DiffmvrError(Exception):
    """Base class for all package errors."""


class ConfigError(DiffmvrError):
    """Invalid or inconsistent user-supplied configuration."""


class DimensionError(DiffmvrError):
    """Array rank/shape/dtype incompatible with the requested operation."""


class ContractError(DiffmvrError):
    """A call precondition was violated by otherwise well-formed inputs."""


class NumericError(DiffmvrError):
    """A non-finite value appeared where the pipeline requires finite math."""


class FormatError(DiffmvrError):
    """A file on disk does not match its declared serialization format."""


class GuidanceError(DiffmvrError):
    """Guidance construction failed (no usable symmetry axis or past frame)."""
