"""Exception types shared across the package."""


class MdnetError(Exception):
    """Base class for all package errors."""


class DimensionError(MdnetError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(MdnetError, ValueError):
    """An operation was called in a way that violates its contract."""


class ConfigError(MdnetError, ValueError):
    """A run configuration is malformed or inconsistent."""


class DataError(MdnetError, ValueError):
    """A dataset file or record is malformed.

    Where possible the message names the file and line that failed.
    """


class CheckpointError(MdnetError, ValueError):
    """A parameter archive is corrupt or does not match the target model."""


class TrainingDiverged(MdnetError, RuntimeError):
    """Training produced a non-finite loss and was aborted."""
