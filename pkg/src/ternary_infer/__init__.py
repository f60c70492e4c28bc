"""CPU inference for ternary-weight transformers on int8 dot-product kernels."""

from .core import (
    QuantizedRowBatch,
    TernarizePolicy,
    TernaryMatrix,
    column_sums,
    dequantize_output,
    quantize_rows,
    reference_float_linear,
    reference_ternary_matmul,
    ternarize_tensor,
)
from .errors import (
    ConfigurationError,
    ContextOverflowError,
    ConversionError,
    DecodeError,
    FormatError,
    QuantizationError,
    ShapeError,
    TernaryInferError,
)
from .kernels import KernelPlan, apply_offset_correction, detect_backend, kernel_matmul, linear_forward
from .model import (
    GenerationParams,
    KVCache,
    ModelConfig,
    TernaryModel,
    forward,
    generate,
    max_logit_difference,
)
from .tokenizer import detokenize, tokenize

__version__ = "0.1.0"
