"""Runtime CPU feature detection and backend selection."""

from __future__ import annotations

import os
from dataclasses import dataclass

from ..errors import ConfigurationError
from . import _native

FORCE_ENV = "LITESPARK_FORCE_BACKEND"


@dataclass(frozen=True)
class Backend:
    """A dot-product kernel family.

    ``activation_offset`` is 128 where the hardware instruction multiplies
    unsigned activation bytes by signed weight bytes, 0 for signed x signed.
    """

    id: str
    vector_bytes: int
    alignment_bytes: int
    activation_offset: int
    symbol: str | None = None

    def __str__(self):
        return self.id


NEON_SDOT = Backend("neon_sdot", 16, 16, 0, "tk_matmul_neon_sdot")
AVX512_VNNI = Backend("avx512_vnni", 64, 64, 128, "tk_matmul_avx512_vnni")
AVX_VNNI = Backend("avx_vnni", 32, 32, 128, "tk_matmul_avx_vnni")
PORTABLE_SCALAR = Backend("portable_scalar", 1, 16, 0)

# Widest first.
PRIORITY = (AVX512_VNNI, AVX_VNNI, NEON_SDOT, PORTABLE_SCALAR)
BACKENDS = {b.id: b for b in PRIORITY}

_FLAG = {
    AVX512_VNNI.id: _native.FLAG_AVX512_VNNI,
    AVX_VNNI.id: _native.FLAG_AVX_VNNI,
    NEON_SDOT.id: _native.FLAG_NEON_SDOT,
}

# Short names accepted by LITESPARK_FORCE_BACKEND / --backend.
ALIASES = {
    "scalar": PORTABLE_SCALAR.id,
    "neon": NEON_SDOT.id,
    "avx512vnni": AVX512_VNNI.id,
    "avxvnni": AVX_VNNI.id,
}


def resolve_name(name: str) -> Backend:
    key = name.strip().lower()
    key = ALIASES.get(key, key)
    try:
        return BACKENDS[key]
    except KeyError:
        valid = sorted(set(ALIASES) | set(BACKENDS))
        raise ConfigurationError(f"unknown backend {name!r}; expected one of {valid}") from None


def cpu_features() -> dict[str, bool]:
    """Dot-product features reported by CPUID (x86) or HWCAP/sysctl (ARM)."""
    flags = _native.cpu_flags()
    return {bid: bool(flags & bit) for bid, bit in _FLAG.items()}


def select_backend(cpu: int, compiled: int, override: str | None = None) -> Backend:
    """Pure selection logic over feature bitmasks.

    A SIMD backend is usable when the CPU advertises it *and* the kernel
    library was built with it.
    """
    usable = {PORTABLE_SCALAR.id}
    usable.update(bid for bid, bit in _FLAG.items() if cpu & bit and compiled & bit)
    if override:
        b = resolve_name(override)
        if b.id not in usable:
            raise ConfigurationError(f"backend {b.id} is not supported on this host")
        return b
    for b in PRIORITY:
        if b.id in usable:
            return b
    return PORTABLE_SCALAR


def available_backends() -> list[Backend]:
    cpu, compiled = _native.cpu_flags(), _native.compiled_flags()
    return [b for b in PRIORITY
            if b is PORTABLE_SCALAR or (cpu & _FLAG[b.id] and compiled & _FLAG[b.id])]


def detect_backend(override: str | None = None) -> Backend:
    """Pick the widest supported backend.

    ``override`` (or the LITESPARK_FORCE_BACKEND environment variable when
    ``override`` is None) forces a specific one; naming an unsupported
    backend raises ConfigurationError.
    """
    if override is None:
        override = os.environ.get(FORCE_ENV) or None
    return select_backend(_native.cpu_flags(), _native.compiled_flags(), override)
