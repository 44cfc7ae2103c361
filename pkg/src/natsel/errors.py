"""Exception types shared across the package."""


class NatselError(Exception):
    """Base class for all package errors."""


class ShapeError(NatselError):
    """Operands have incompatible or invalid shapes."""


class NumericError(NatselError):
    """An operation produced or received non-finite values, or left its domain."""


class TapeError(NatselError):
    """Invalid use of a gradient tape (e.g. backward from a foreign tensor)."""


class ConfigError(NatselError):
    """A configuration value violates its contract."""


class FormatError(NatselError):
    """A file does not match its declared binary/text format."""


class AnalysisError(NatselError):
    """An analysis is undefined for the given inputs (e.g. zero variance)."""


class TrainingDiverged(NatselError):
    """Training hit a non-finite loss; carries the location of the failure."""

    def __init__(self, epoch: int, step: int, quantity: str, value: float):
        self.epoch = epoch
        self.step = step
        self.quantity = quantity
        self.value = value
        super().__init__(
            f"non-finite {quantity} ({value!r}) at epoch {epoch}, step {step}"
        )
