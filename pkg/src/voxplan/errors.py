"""Exception types shared across the package."""


class VoxplanError(Exception):
    """Base class for every error raised by this package."""


class LayoutError(VoxplanError):
    """Bad coordinates, widths, or descriptor misuse in the blocked layout."""


class FormatError(VoxplanError):
    """A binary container (volume, weight store, plan) violates its format."""


class ModelError(VoxplanError):
    """A network description is malformed or inconsistent."""


class ParseError(ModelError):
    """Text could not be parsed; carries the source position."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)


class UnknownLayerError(ModelError):
    """A layer type outside the supported set."""


class DanglingReferenceError(ModelError):
    """A layer consumes a blob that no layer produces."""


class DuplicateTopError(ModelError):
    """Two layers write the same blob name."""


class CycleError(ModelError):
    """The layer graph is not acyclic."""


class ShapeError(ModelError):
    """Shape propagation failed or declared weights do not match."""


class PlanError(VoxplanError):
    """The planner hit an unsupported construct or internal inconsistency."""


class ExecutionError(VoxplanError):
    """Inputs handed to a compiled plan do not match what it expects."""


class TileError(VoxplanError):
    """A volume cannot be decomposed into patches of the plan's shape."""
