"""Exception types shared across the package."""


class PromptbandError(Exception):
    """Base class for all package errors."""


class DimensionError(PromptbandError, ValueError):
    """Embedding or matrix dimensions are inconsistent."""


class EmptySpaceError(PromptbandError, ValueError):
    """A prompt pool was built from an empty instruction or exemplar list."""


class RangeError(PromptbandError, ValueError):
    """An index or size is outside its valid range."""


class ValidationError(PromptbandError, ValueError):
    """A value violates a declared domain constraint (e.g. loss outside [0, 1])."""


class AlignmentError(PromptbandError, ValueError):
    """Two sequences that must be aligned have different lengths."""


class NumericsError(PromptbandError, ArithmeticError):
    """A numerical routine failed (non-SPD matrix, non-finite gradients, ...)."""


class InsufficientDataError(PromptbandError, ValueError):
    """Not enough observations for the requested computation."""


class ExhaustedError(PromptbandError, RuntimeError):
    """A candidate pool has no remaining entries."""


class ConfigError(PromptbandError, ValueError):
    """A run configuration is invalid.  Maps to exit code 2 in the CLI."""


class DegenerateScenarioError(PromptbandError, ValueError):
    """Scenario normalization bounds collapse (worst == best)."""


class PlanError(PromptbandError, ValueError):
    """A multi-fidelity schedule cannot be built from the given inputs."""


class OracleUnavailableError(PromptbandError, RuntimeError):
    """A remote oracle failed after retries.

    ``partial`` carries the losses that were successfully computed before the
    failure, keyed by instance id, so callers can keep their cache warm.
    """

    def __init__(self, message: str, partial: dict | None = None):
        super().__init__(message)
        self.partial = dict(partial or {})
