"""Exception types shared across the package."""


class GridError(ValueError):
    """Invalid grid parameters or a grid mismatch between operands."""


class RepresentationError(ValueError):
    """Operation requires the other (position/momentum) representation."""


class SizeCapError(ValueError):
    """Requested lattice or dense matrix exceeds the configured size cap."""


class PreconditionError(ValueError):
    """Numerical preconditions of an operation are violated."""


class ClassificationError(ValueError):
    """Bound/continuum classification is undefined for this operator."""


class BoundStateError(ValueError):
    """Initial state carries too little weight in the continuum subspace."""


class MonitorAbort(RuntimeError):
    """Wave function reached the periodic boundary layer.

    ``partial`` holds whatever was computed before the abort (a Trajectory,
    a DiagnosticSeries, ...), so callers can still persist it.
    """

    def __init__(self, message, partial=None, boundary_mass=None):
        super().__init__(message)
        self.partial = partial
        self.boundary_mass = boundary_mass
