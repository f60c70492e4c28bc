"""Threaded int8 x ternary matmul over the selected backend, plus the linear-layer pipeline."""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import (
    QuantizedRowBatch,
    TernaryMatrix,
    aligned_empty,
    dequantize_output,
    quantize_rows,
    _check_operands,
)
from ..errors import ConfigurationError, ShapeError
from . import _native
from .dispatch import PORTABLE_SCALAR, Backend, detect_backend

MIN_BLOCK_COLS = 4


@dataclass(frozen=True)
class KernelPlan:
    backend: Backend = field(default_factory=detect_backend)
    threads: int = 1
    partition: str = "by_output_column_blocks"

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")
        if self.partition != "by_output_column_blocks":
            raise ConfigurationError(f"unknown partition {self.partition!r}")

    def blocks(self, n: int) -> list[tuple[int, int]]:
        """Contiguous, disjoint column ranges covering ``[0, n)``, at least 4 columns each."""
        if n <= 0:
            return []
        parts = max(1, min(self.threads, n // MIN_BLOCK_COLS))
        base, extra = divmod(n, parts)
        out, start = [], 0
        for p in range(parts):
            stop = start + base + (p < extra)
            out.append((start, stop))
            start = stop
        return out


_pools: dict[int, ThreadPoolExecutor] = {}
_pools_lock = threading.Lock()


def _pool(threads: int) -> ThreadPoolExecutor:
    with _pools_lock:
        pool = _pools.get(threads)
        if pool is None:
            pool = _pools[threads] = ThreadPoolExecutor(threads, thread_name_prefix="ternary-kernel")
        return pool


def _scalar_block(x: np.ndarray, w: np.ndarray, out: np.ndarray, n0: int, n1: int) -> None:
    # Sum of products in int32; exact because |x| <= 255 and K < 2**16.
    np.matmul(x, w[n0:n1].T.astype(np.int32), out=out[:, n0:n1])


def apply_offset_correction(acc_raw: np.ndarray, offset: int, col_sums: np.ndarray) -> np.ndarray:
    """Undo an activation bias: ``acc_raw[i, j] - offset * col_sums[j]``."""
    if offset == 0:
        return acc_raw
    return (acc_raw - np.int32(offset) * np.asarray(col_sums, dtype=np.int32)[None, :]).astype(np.int32)


def _biased_activations(codes: np.ndarray, offset: int, alignment: int) -> np.ndarray:
    """Activations as the kernel consumes them, in an aligned buffer."""
    buf = aligned_empty(codes.shape, np.uint8 if offset else np.int8, alignment)
    if offset == 128:
        # x + 128 as uint8 is x with the sign bit flipped.
        np.bitwise_xor(codes.view(np.uint8), np.uint8(0x80), out=buf)
    elif offset == 0:
        buf[...] = codes
    else:
        raise ConfigurationError(f"unsupported activation offset {offset}")
    return buf


def kernel_matmul_raw(plan: KernelPlan, xq: QuantizedRowBatch, w: TernaryMatrix) -> np.ndarray:
    """Accumulators as produced by the backend, before offset correction."""
    _check_operands(xq, w)
    backend = plan.backend
    if w.rows_padded % backend.alignment_bytes:
        raise ShapeError(
            f"weights padded to {w.rows_padded} are not aligned for {backend.id} "
            f"({backend.alignment_bytes} bytes); repad them first"
        )
    m, kp, n = xq.num_rows, w.rows_padded, w.cols
    out = np.empty((m, n), dtype=np.int32)
    if m == 0 or n == 0:
        return out
    x = _biased_activations(xq.codes, backend.activation_offset, max(backend.alignment_bytes, 16))

    if backend is PORTABLE_SCALAR or backend.symbol is None:
        xi = x.astype(np.int32)
        work = lambda n0, n1: _scalar_block(xi, w.codes, out, n0, n1)  # noqa: E731
    else:
        fn = _native.kernel(backend.symbol)
        if fn is None:
            raise ConfigurationError(f"kernel library does not provide {backend.id}")
        xp, wp, op = x.ctypes.data, w.codes.ctypes.data, out.ctypes.data
        work = lambda n0, n1: fn(xp, wp, op, m, kp, n, n0, n1)  # noqa: E731

    blocks = plan.blocks(n)
    if len(blocks) == 1:
        work(*blocks[0])
    else:
        for f in [_pool(plan.threads).submit(work, n0, n1) for n0, n1 in blocks]:
            f.result()
    return out


def kernel_matmul(plan: KernelPlan, xq: QuantizedRowBatch, w: TernaryMatrix) -> np.ndarray:
    """Signed int32 accumulators ``xq @ w``; bit-identical to the scalar reference."""
    raw = kernel_matmul_raw(plan, xq, w)
    return apply_offset_correction(raw, plan.backend.activation_offset, w.col_sums)


def linear_forward(x, w: TernaryMatrix, plan: KernelPlan | None = None) -> np.ndarray:
    """Quantize rows, integer matmul, offset-correct and rescale to float32."""
    plan = plan or KernelPlan()
    xq = quantize_rows(x, pad_to=w.rows_padded)
    acc = kernel_matmul(plan, xq, w)
    return dequantize_output(acc, xq.scales, w.tensor_scale)
