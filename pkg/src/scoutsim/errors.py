"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


class InvariantError(ValueError):
    """A structural invariant (shape, range, alignment) was violated."""


class NotFoundError(KeyError):
    """A paper, query, or file id does not exist."""


class InvalidProbeError(ValueError):
    """A search probe vector is unusable (zero norm or wrong shape)."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""


class EpisodeAbortError(RuntimeError):
    """An episode received a malformed action and cannot continue."""


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. empty truth set)."""


class AlignmentError(ValueError):
    """Two logs that must share a step grid do not."""
