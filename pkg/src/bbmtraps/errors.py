"""Exception and warning types shared across the package."""


class BBMTrapsError(Exception):
    """Base class for errors raised by this package."""


class LawError(BBMTrapsError, ValueError):
    """Invalid offspring law (negative mass, bad normalization, nonzero p1, ...)."""


class SubcriticalError(BBMTrapsError):
    """Skeleton decomposition requested for a law with mean offspring <= 1."""


class DomainError(BBMTrapsError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class WindowError(BBMTrapsError):
    """A spatial query is not covered by the sampled trap window."""


class CapacityError(BBMTrapsError):
    """Particle cap hit during simulation (soft: normally only a tree flag)."""


class TruncationError(BBMTrapsError):
    """Too many replicates hit the particle cap for the estimate to be trusted."""


class AcceptanceError(BBMTrapsError):
    """Conditioning rejected every replicate; no conditional estimate exists."""


class ConvergenceError(BBMTrapsError):
    """Iterative refinement stalled above the requested tolerance."""


class ConfigError(BBMTrapsError, ValueError):
    """Experiment configuration failed validation."""


class LowAcceptanceWarning(UserWarning):
    """Conditioning acceptance rate fell below the configured floor."""
