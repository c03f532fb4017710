"""Exception types shared across the library.

The CLI maps these onto exit codes: anything derived from ValidationError
exits with 2, anything derived from EstimationError exits with 3.
"""


class KinegraphError(Exception):
    """Base class for all library errors."""


class ValidationError(KinegraphError):
    """Bad inputs: shapes, ranges, malformed files, unknown config keys."""


class ShapeError(ValidationError):
    """Array dimensions disagree with the documented contract."""


class SchemaVersionError(ValidationError):
    """Serialized document carries an unsupported schema version."""


class EstimationError(KinegraphError):
    """The estimation stage could not produce a usable result."""


class BranchAmbiguityError(EstimationError):
    """Rotation angle at or beyond pi, where the log map branch is ambiguous."""


class DegenerateTwistError(EstimationError):
    """Twist has neither a usable rotational nor translational component."""


class EmptyClusterError(EstimationError):
    """Trajectory clustering produced no usable cluster."""


class InsufficientMotionError(EstimationError):
    """Too little motion to form secants or constrain a twist."""


class InsufficientPairsError(EstimationError):
    """No admissible secant pairs for the cosine prior."""


class DegenerateMotionError(EstimationError):
    """Point set carries no motion information (singular normal equations)."""


class ConvergenceError(EstimationError):
    """Optimizer hit the iteration cap; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class UnmatchedCostError(EstimationError):
    """No evaluable frame for an articulation/object cost term."""


class InfeasibleError(EstimationError):
    """Assignment problem admits no feasible solution."""
