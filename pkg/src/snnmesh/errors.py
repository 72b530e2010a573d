"""Exception hierarchy shared by every subpackage.

The CLI maps these onto exit codes: :class:`ValidationError` and its
relatives exit with 2, :class:`SimulationError` with 3.
"""


class SnnMeshError(Exception):
    """Base class for all simulator errors."""


class ParseError(SnnMeshError):
    """A network, mapping or input file could not be parsed."""


class ValidationError(SnnMeshError):
    """A value parsed correctly but violates a documented invariant."""

    def __init__(self, message, layer=None, field=None):
        self.layer = layer
        self.field = field
        where = []
        if layer is not None:
            where.append(f"layer {layer}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class MagnitudeExceedsTimeSteps(ValidationError):
    pass


class InvariantViolation(SnnMeshError):
    pass


# processing element
class RowIdOutOfRange(SnnMeshError):
    pass


class BatchTooWide(SnnMeshError):
    pass


# network-on-chip
class PositionOverflow(ValidationError):
    pass


class HopOverflow(ValidationError):
    pass


class ChecksumMismatch(SnnMeshError):
    pass


class NoPathConfigured(SnnMeshError):
    pass


# scheduling
class DuplicateArrival(SnnMeshError):
    pass


class EmptyTrace(SnnMeshError):
    pass


# mapping
class LayerTooLarge(ValidationError):
    pass


class TooManyPartitions(ValidationError):
    pass


# engine
class SimulationError(SnnMeshError):
    pass


class MappingIncomplete(SimulationError):
    pass


class DeadlockDetected(SimulationError):
    pass


class LengthMismatch(ValueError, SnnMeshError):
    pass


class UnknownAxis(ValidationError):
    pass
