"""Exception types raised across the package."""


class RdlvmError(ValueError):
    """Base class for contract violations in this package."""


class InvalidDimension(RdlvmError):
    pass


class InvalidWeights(RdlvmError):
    pass


class ImpossibleDataPoint(RdlvmError):
    """A data point has zero evidence under the model, so the NLL is infinite."""

    def __init__(self, row: int, label: str | None = None):
        self.row = row
        self.label = label
        name = f"row {row}" if label is None else f"row {row} ({label!r})"
        super().__init__(f"data point at {name} is impossible under the model (log evidence is -inf)")


class InvalidInit(RdlvmError):
    pass


class InfiniteDistortion(RdlvmError):
    pass


class SingularCovariance(RdlvmError):
    pass


class EstimatorDegenerate(RdlvmError):
    pass


class InvalidTransform(RdlvmError):
    pass


class InputFormatError(RdlvmError):
    """Malformed input file; the message carries the offending line number."""
