"""Exception hierarchy shared by all geocsp modules."""


class GeoCspError(Exception):
    """Base class for all errors raised by this package."""


class GridRangeError(GeoCspError):
    """Point or index lies outside the grid."""


class MissingAssignmentError(GeoCspError):
    """A constraint was checked against an assignment missing one of its variables."""


class IntegralityError(GeoCspError):
    """A resolved coordinate is not an integer (midpoint/diagonal parity, off-lattice reflection)."""


class DegeneracyError(GeoCspError):
    """Degenerate geometry: coincident axis points or a zero-length square side."""


class UnderdeterminedError(GeoCspError):
    """The assigned variables of a constraint do not form a valid determining subset."""


class UnsolvableError(GeoCspError):
    """The solver reached a fixpoint with unresolved variables."""


class InconsistencyError(GeoCspError):
    """A variable was re-derived with a conflicting value."""


class GenerationError(GeoCspError):
    """The problem generator exhausted its resampling budget."""


class DimensionError(GeoCspError):
    """Tensor shapes do not agree."""


class GraphError(GeoCspError):
    """Backward was requested on a tensor that is not connected to the recorded graph."""


class ConfigError(GeoCspError):
    """Invalid or inconsistent configuration."""


class TrainingAbortError(GeoCspError):
    """Training encountered a non-finite loss or gradient."""


class CheckpointError(GeoCspError):
    """Checkpoint bytes are malformed or carry an unsupported version."""
