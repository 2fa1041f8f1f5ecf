"""Exception hierarchy shared across the toolkit.

``DataError`` covers everything a well-formed run can hit in its inputs
(bad files, violated invariants, impossible requests); the CLI maps it to
exit code 2.  Anything else is a runtime failure (exit code 3).
"""


class DataError(ValueError):
    """Base class for input and validation failures."""


class SchemaError(DataError):
    """A serialized record does not match the documented schema."""


class InvariantError(DataError):
    """A value violates a documented structural invariant."""


class ShapeMismatchError(DataError):
    """Array or grid dimensions disagree between arguments."""


class UnsatisfiableMaskError(DataError):
    """No mask placement can reach the requested target count."""


class NoEligibleAgentError(DataError):
    """No agent satisfies the selection criterion."""


class InvalidEgoError(DataError):
    """The designated ego agent cannot serve as a viewpoint."""


class NonFiniteError(RuntimeError):
    """A NaN or infinity was produced where finite values are required."""


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss; carries the offending step."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class CheckpointError(DataError):
    """A checkpoint file is malformed, truncated, or incompatible."""


class MissingLabelsError(DataError):
    """Occlusion labels are required for this task but were not supplied."""


class EmptySubsetError(DataError):
    """Metric subset filtering selected no agents."""
