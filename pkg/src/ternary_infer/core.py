"""Ternary weight matrices, per-row activation quantization and scalar reference kernels.

Everything in here is a pure function over immutable inputs. The integer
reference kernel is the bit-exact oracle every SIMD backend is checked against.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConversionError, QuantizationError, ShapeError

QMAX = 127
# Widest SIMD alignment we support; every code buffer starts on this boundary.
MAX_ALIGNMENT = 64
VALID_ALIGNMENTS = (16, 32, 64)
# int32 accumulation is overflow-free below this input width (|x*w| <= 255 incl. offset).
MAX_K = 1 << 16
# Rows whose largest magnitude is below this would need a subnormal (imprecise)
# float64 scale; they are flushed to zero instead. Unreachable from float32 input.
FLUSH_THRESHOLD = QMAX * np.finfo(np.float64).tiny


def aligned_empty(shape, dtype, alignment: int = MAX_ALIGNMENT) -> np.ndarray:
    """Allocate an uninitialised C-contiguous array whose data pointer is ``alignment``-aligned."""
    dtype = np.dtype(dtype)
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    raw = np.empty(nbytes + alignment, dtype=np.uint8)
    offset = (-raw.ctypes.data) % alignment
    return raw[offset:offset + nbytes].view(dtype).reshape(shape)


def aligned_zeros(shape, dtype, alignment: int = MAX_ALIGNMENT) -> np.ndarray:
    out = aligned_empty(shape, dtype, alignment)
    out[...] = 0
    return out


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (np.round rounds ties to even)."""
    t = np.trunc(v)
    frac = v - t  # exact in binary floating point
    return t + np.sign(v) * (np.abs(frac) >= 0.5)


def padded_length(k: int, alignment: int) -> int:
    """Smallest multiple of ``alignment`` that is >= k (at least one quantum)."""
    return max(1, -(-k // alignment)) * alignment


class GammaMode(str, enum.Enum):
    MEAN_ABS_PER_TENSOR = "mean_abs_per_tensor"
    FIXED_ONE = "fixed_one"


@dataclass(frozen=True)
class TernarizePolicy:
    gamma_mode: GammaMode = GammaMode.MEAN_ABS_PER_TENSOR

    def __post_init__(self):
        object.__setattr__(self, "gamma_mode", GammaMode(self.gamma_mode))


@dataclass(frozen=True, eq=False)
class TernaryMatrix:
    """Ternary weights stored output-major as int8 with zero padding.

    ``codes`` has shape ``(cols, rows_padded)``: row ``j`` is the contiguous
    weight vector of output column ``j``. ``col_sums[j]`` is the sum of that
    vector and ``tensor_scale`` the per-tensor dequantization factor.
    """

    rows_logical: int
    cols: int
    rows_padded: int
    codes: np.ndarray
    col_sums: np.ndarray
    tensor_scale: float

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.dtype != np.int8 or codes.shape != (self.cols, self.rows_padded):
            raise ShapeError(
                f"codes must be int8 of shape {(self.cols, self.rows_padded)}, "
                f"got {codes.dtype} {codes.shape}"
            )
        if self.rows_padded < self.rows_logical:
            raise ShapeError("rows_padded is smaller than rows_logical")
        if codes.ctypes.data % MAX_ALIGNMENT or not codes.flags.c_contiguous:
            realigned = aligned_empty(codes.shape, np.int8)
            realigned[...] = codes
            codes = realigned
        codes.flags.writeable = False
        sums = np.ascontiguousarray(self.col_sums, dtype=np.int32)
        if sums.shape != (self.cols,):
            raise ShapeError(f"col_sums must have shape ({self.cols},), got {sums.shape}")
        sums.flags.writeable = False
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "col_sums", sums)
        object.__setattr__(self, "tensor_scale", float(np.float32(self.tensor_scale)))

    @property
    def shape(self) -> tuple[int, int]:
        """Logical ``(K, N)`` shape."""
        return self.rows_logical, self.cols

    @property
    def nbytes(self) -> int:
        return self.codes.nbytes

    def alignment(self) -> int:
        """Largest supported alignment that ``rows_padded`` satisfies."""
        for a in sorted(VALID_ALIGNMENTS, reverse=True):
            if self.rows_padded % a == 0:
                return a
        return 1

    def validate(self) -> None:
        """Check every structural invariant; raise ``ShapeError`` on violation."""
        c = self.codes
        if c.size and (c.min() < -1 or c.max() > 1):
            raise ShapeError("codes outside {-1, 0, +1}")
        if np.any(c[:, self.rows_logical:]):
            raise ShapeError("non-zero values in the padded region")
        if not np.array_equal(column_sums(self), self.col_sums):
            raise ShapeError("col_sums do not match codes")

    def dense(self, dtype=np.float32) -> np.ndarray:
        """Dequantized ``(K, N)`` float weights, ``codes * tensor_scale``."""
        dt = np.dtype(dtype)
        w = np.ascontiguousarray(self.codes[:, : self.rows_logical].T, dtype=dt)
        w *= dt.type(self.tensor_scale)
        return w

    def ternary_codes(self) -> np.ndarray:
        """Logical ``(K, N)`` int8 code matrix (a copy, input-major)."""
        return np.ascontiguousarray(self.codes[:, : self.rows_logical].T)

    def repad(self, alignment: int) -> TernaryMatrix:
        """Return the same weights padded to a different alignment quantum."""
        kp = padded_length(self.rows_logical, alignment)
        if kp == self.rows_padded:
            return self
        codes = aligned_zeros((self.cols, kp), np.int8)
        k = min(kp, self.rows_padded)
        codes[:, :k] = self.codes[:, :k]
        return TernaryMatrix(self.rows_logical, self.cols, kp, codes, self.col_sums, self.tensor_scale)


@dataclass(frozen=True, eq=False)
class QuantizedRowBatch:
    """int8 activation rows (zero padded) plus one float64 scale per row."""

    num_rows: int
    row_len: int
    codes: np.ndarray
    scales: np.ndarray

    @property
    def padded_len(self) -> int:
        return self.codes.shape[1]


def quantize_rows(x, pad_to: int | None = None) -> QuantizedRowBatch:
    """Per-row symmetric int8 quantization.

    Each row is scaled so its largest magnitude maps to 127; codes are rounded
    half away from zero and never reach -128. An all-zero row gets scale 0, as
    does a row whose largest magnitude is below ``FLUSH_THRESHOLD`` (~2.8e-306).

    Args:
        x: float array of shape ``(M, K)`` (a 1-D array is treated as one row).
        pad_to: padded row length (>= K); the tail is zero-filled.

    Returns:
        QuantizedRowBatch with codes of shape ``(M, pad_to)``.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D activation matrix, got shape {x.shape}")
    m, k = x.shape
    pad_to = k if pad_to is None else int(pad_to)
    if pad_to < k:
        raise ShapeError(f"pad_to={pad_to} is smaller than row length {k}")
    x64 = x.astype(np.float64, copy=False)
    if not np.all(np.isfinite(x64)):
        raise QuantizationError("activations contain NaN or infinity")

    amax = np.abs(x64).max(axis=1) if k else np.zeros(m)
    amax = np.where(amax >= FLUSH_THRESHOLD, amax, 0.0)
    safe = np.where(amax > 0, amax, 1.0)
    q = round_half_away(x64 * QMAX / safe[:, None])
    codes = aligned_zeros((m, pad_to), np.int8)
    codes[:, :k] = np.clip(q, -QMAX, QMAX)
    scales = amax / QMAX
    return QuantizedRowBatch(m, k, codes, scales)


def dequantize_output(acc: np.ndarray, row_scales, tensor_scale: float) -> np.ndarray:
    """Rescale int32 accumulators to float32: ``acc[i, j] * row_scales[i] * tensor_scale``."""
    y = np.asarray(acc).astype(np.float64)
    y *= np.asarray(row_scales, dtype=np.float64)[:, None] * float(tensor_scale)
    return y.astype(np.float32)


def ternarize_tensor(w, policy: TernarizePolicy | None = None, alignment: int = 64) -> TernaryMatrix:
    """Round a float ``(K, N)`` weight matrix to ternary codes.

    With the absmean policy the weights are first divided by ``gamma =
    mean(|w|)``, which becomes the tensor scale; ``fixed_one`` uses gamma 1
    for checkpoints that are already ternary.
    """
    policy = policy or TernarizePolicy()
    if alignment not in VALID_ALIGNMENTS:
        raise ConversionError(f"alignment must be one of {VALID_ALIGNMENTS}, got {alignment}")
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ConversionError(f"expected a 2-D weight matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ConversionError("weights contain NaN or infinity")
    k, n = w.shape
    if k > MAX_K:
        raise ConversionError(f"input width {k} exceeds the int32 accumulation limit {MAX_K}")

    gamma = 1.0
    if policy.gamma_mode is GammaMode.MEAN_ABS_PER_TENSOR and w.size:
        mean_abs = float(np.abs(w).mean())
        gamma = mean_abs if mean_abs > 0 else 1.0
    q = np.clip(round_half_away(w / gamma), -1, 1).astype(np.int8)

    kp = padded_length(k, alignment)
    codes = aligned_zeros((n, kp), np.int8)
    codes[:, :k] = q.T
    sums = codes.sum(axis=1, dtype=np.int32)
    return TernaryMatrix(k, n, kp, codes, sums, gamma)


def column_sums(w: TernaryMatrix) -> np.ndarray:
    """Exact int32 sum of each column's codes over the logical rows."""
    return w.codes[:, : w.rows_logical].sum(axis=1, dtype=np.int32)


def _check_operands(xq: QuantizedRowBatch, w: TernaryMatrix) -> None:
    if xq.padded_len != w.rows_padded:
        raise ShapeError(
            f"activation rows are padded to {xq.padded_len} but weights to {w.rows_padded}"
        )
    if xq.row_len != w.rows_logical:
        raise ShapeError(f"activation width {xq.row_len} != weight rows {w.rows_logical}")


def reference_ternary_matmul(xq: QuantizedRowBatch, w: TernaryMatrix) -> np.ndarray:
    """Multiplication-free reference: add activations where w=+1, subtract where w=-1.

    Exact integer arithmetic (int64 internally, returned as int32 ``(M, N)``).
    """
    _check_operands(xq, w)
    x = xq.codes.astype(np.int64)
    plus = (w.codes == 1).astype(np.int64)
    minus = (w.codes == -1).astype(np.int64)
    acc = x @ plus.T - x @ minus.T
    return acc.astype(np.int32)


def reference_float_linear(x, w) -> np.ndarray:
    """Plain float matrix product ``x @ w``."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {w.shape}")
    return x @ w


def pipeline_error_bound(xq: QuantizedRowBatch, w: TernaryMatrix) -> np.ndarray:
    """Worst-case ``(M, N)`` deviation of the quantized pipeline from the float product.

    Each nonzero weight can pick up at most half a quantization step of error.
    """
    nnz = np.count_nonzero(w.codes, axis=1)
    return (xq.scales.astype(np.float64)[:, None] / 2) * nnz[None, :] * w.tensor_scale
