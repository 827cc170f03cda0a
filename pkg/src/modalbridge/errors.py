"""Exception types shared across the package.

Plain ``ValueError`` is used for generic bad arguments (dimension
mismatches, out-of-range labels); the classes below mark conditions a
caller may want to handle separately.
"""


class DegenerateInputError(ValueError):
    """Input is structurally valid but numerically unusable (e.g. a
    zero-norm vector handed to a cosine ranking)."""


class InvalidStateError(RuntimeError):
    """Objects passed together do not belong together (e.g. a forward
    trace that does not match the activation gradients)."""


class UndefinedQueryError(ValueError):
    """A retrieval query has no relevant gallery item, so its average
    precision is undefined."""


class FeatureFormatError(ValueError):
    """A feature / label / checkpoint file failed to parse. The message
    carries the path and the offending line or byte offset."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss term."""

    def __init__(self, term: str, iteration: int):
        self.term = term
        self.iteration = iteration
        super().__init__(
            f"non-finite value in loss term '{term}' at iteration {iteration}"
        )
