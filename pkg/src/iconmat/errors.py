"""Exception types shared across the toolkit."""


class IconmatError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(IconmatError):
    """A value violates a domain-type invariant (NaN/Inf, out of range)."""


class DimensionError(IconmatError):
    """Spatial or channel shapes do not line up."""


class EmptyPromptError(IconmatError):
    """A prompt rasterizes to an all-zero region of interest."""


class EmptyQueryError(IconmatError):
    """The RoI leaves no usable feature cells to build a query from."""


class ConfigurationError(IconmatError):
    """A config value is outside the supported range."""


class BackendError(IconmatError):
    """The feature backend is unavailable or failed to run."""


class ParameterError(IconmatError):
    """Head parameters are malformed or non-finite."""


class DegenerateSampleError(IconmatError):
    """A training sample has no confident area left to supervise."""


class NonFiniteLossError(IconmatError):
    """Training produced a NaN/Inf loss; carries the offending sample ids."""

    def __init__(self, message: str, sample_ids: tuple[str, ...] = ()):
        super().__init__(message)
        self.sample_ids = sample_ids
