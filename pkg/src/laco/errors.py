"""Exception types shared across the package."""


class LacoError(Exception):
    """Base class for all package errors."""


class ConfigError(LacoError):
    """Invalid model or scenario configuration."""


class ContextOverflowError(LacoError):
    """An append would exceed the cache's maximum context length."""


class ShapeMismatchError(LacoError):
    """Tensor shapes are incompatible (e.g. payload vs. receiving model)."""


class PayloadFormatError(LacoError):
    """A byte stream does not decode to a well-formed payload."""


class AlignmentError(LacoError):
    """The alignment projection could not be computed (SVD failure)."""


class EmptyTraceError(LacoError):
    """Saliency requested on an empty deliberation trace (m = 0)."""


class ScenarioError(LacoError):
    """Malformed scenario file or inconsistent world state."""


class InvalidActionError(LacoError):
    """A decision decode produced a token outside the action slots."""
