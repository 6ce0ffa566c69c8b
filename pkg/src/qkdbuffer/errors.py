"""Exception types shared across the package."""


class QkdBufferError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(QkdBufferError):
    """Raised when a scenario configuration is invalid.

    Carries one message per offending field so callers can report
    everything wrong with a file at once.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class Unreachable(QkdBufferError):
    """No path exists between the requested endpoints."""


class InsufficientSamples(QkdBufferError):
    """Too few samples for the requested estimate."""


class LagRangeExceeded(QkdBufferError):
    """An autocovariance series is shorter than the needed lag range."""


class InvalidEpsilon(QkdBufferError):
    """Tolerance outside the supported (0, 0.5) range."""


class DegenerateDistribution(QkdBufferError):
    """A distribution fit was requested on constant data."""


class InvalidShape(QkdBufferError):
    """Heavy-tail shape parameter would give an infinite mean."""


class EmptyProbe(QkdBufferError):
    """A probe window ended without observing any key deliveries."""
