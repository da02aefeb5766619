"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit 1, numeric and
simulation failures exit 2, I/O problems exit 3.
"""


class OplearnError(Exception):
    """Base class for all package-specific errors."""


class ContractError(OplearnError, ValueError):
    """A caller violated a documented precondition (shape, range, order)."""


class ConstructionError(OplearnError, RuntimeError):
    """An object could not be built soundly (e.g. numerically singular Gram)."""


class SimulationError(OplearnError, RuntimeError):
    """Path simulation or pathwise-functional evaluation failed.

    ``step_index`` locates the offending time step when known;
    ``record_index`` the offending sample when raised during generation.
    """

    def __init__(self, message, step_index=None, record_index=None):
        super().__init__(message)
        self.step_index = step_index
        self.record_index = record_index


class NumericError(OplearnError, RuntimeError):
    """Non-finite values or divergence detected during training/evaluation."""

    def __init__(self, message, record_index=None):
        super().__init__(message)
        self.record_index = record_index


class DataFormatError(OplearnError, ValueError):
    """A dataset file failed to parse. ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class CheckpointError(OplearnError, ValueError):
    """A checkpoint file is corrupt, truncated, or shape-incompatible."""


class ConfigError(OplearnError, ValueError):
    """An experiment configuration failed validation."""
