"""In-context image matting: one prompted reference drives a batch of targets."""

from .core import (
    AlphaMatte,
    ContextGroup,
    ImagePlane,
    MattingRequest,
    RoiPrompt,
    Stroke,
    composite,
    rasterize_prompt,
)
from .errors import (
    BackendError,
    ConfigurationError,
    DegenerateSampleError,
    DimensionError,
    EmptyPromptError,
    EmptyQueryError,
    IconmatError,
    NonFiniteLossError,
    ParameterError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaMatte",
    "BackendError",
    "ConfigurationError",
    "ContextGroup",
    "DegenerateSampleError",
    "DimensionError",
    "EmptyPromptError",
    "EmptyQueryError",
    "IconmatError",
    "ImagePlane",
    "MattingRequest",
    "NonFiniteLossError",
    "ParameterError",
    "RoiPrompt",
    "Stroke",
    "ValidationError",
    "composite",
    "rasterize_prompt",
    "__version__",
]
