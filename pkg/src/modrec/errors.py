"""Exception types shared across the workbench."""


class ModrecError(Exception):
    """Base class for all workbench errors."""


class UnsupportedScheme(ModrecError):
    """Requested modulation scheme is not in the supported set."""


class InvalidSymbol(ModrecError):
    """Symbol index outside the constellation."""


class EmptySignal(ModrecError):
    """Operation requires at least one sample."""


class ZeroPowerSignal(ModrecError):
    """Operation requires a signal with nonzero average power."""


class ZeroPowerPerturbation(ModrecError):
    """Perturbation has zero power, ratio undefined."""


class ZeroPerturbation(ModrecError):
    """Alignment undefined for an all-zero perturbation."""


class ShapeError(ModrecError):
    """Array shapes are incompatible with the operation."""


class LabelError(ModrecError):
    """Class label outside the valid range."""


class TapeEmpty(ModrecError):
    """Backward requested but no forward pass is recorded."""


class InvalidSplit(ModrecError):
    """Split fractions outside their valid ranges."""


class DataError(ModrecError):
    """Dataset is missing a required split or is otherwise unusable."""


class FormatError(ModrecError):
    """File does not conform to the on-disk format."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(ModrecError):
    """File was written by an unknown (newer) format version."""


class ConfigError(ModrecError):
    """Invalid configuration value."""


class CheckpointError(ModrecError):
    """Checkpoint file is corrupt or inconsistent."""
