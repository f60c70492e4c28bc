from .dispatch import (
    ALIASES,
    AVX512_VNNI,
    AVX_VNNI,
    BACKENDS,
    FORCE_ENV,
    NEON_SDOT,
    PORTABLE_SCALAR,
    PRIORITY,
    Backend,
    available_backends,
    cpu_features,
    detect_backend,
    resolve_name,
    select_backend,
)
from .matmul import (
    KernelPlan,
    apply_offset_correction,
    kernel_matmul,
    kernel_matmul_raw,
    linear_forward,
)

__all__ = [
    "ALIASES", "AVX512_VNNI", "AVX_VNNI", "BACKENDS", "FORCE_ENV", "NEON_SDOT",
    "PORTABLE_SCALAR", "PRIORITY", "Backend", "KernelPlan", "apply_offset_correction",
    "available_backends", "cpu_features", "detect_backend", "kernel_matmul",
    "kernel_matmul_raw", "linear_forward", "resolve_name", "select_backend",
]
