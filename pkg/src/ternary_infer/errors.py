"""Exception hierarchy shared by every module of the package."""


class TernaryInferError(Exception):
    """Base class for all errors raised by ternary_infer."""


class QuantizationError(TernaryInferError, ValueError):
    """Activation or weight data cannot be quantized (e.g. non-finite values)."""


class ShapeError(TernaryInferError, ValueError):
    """Operands have incompatible shapes or padding."""


class ConfigurationError(TernaryInferError, ValueError):
    """Invalid model, kernel or runtime configuration."""


class ContextOverflowError(TernaryInferError):
    """A request needs more positions than the model's context window holds."""


class DecodeError(TernaryInferError, ValueError):
    """A token id is outside the tokenizer vocabulary."""


class ConversionError(TernaryInferError, ValueError):
    """A float checkpoint cannot be converted to the ternary format."""


class FormatError(TernaryInferError):
    """A model container is malformed, truncated or corrupted."""
