"""Float checkpoint (``.tf32``) and converted ternary (``.trnq``) containers.

Both formats are little-endian with fixed-width fields::

    .tf32  "TF32" u32 version=1, u32 json_len, json config, u32 tensor_count,
           per tensor: u16 name_len, name, u8 ndim, u32 dims[ndim], f32 data

    .trnq  "TRNQ" u32 version=1, u32 alignment, u32 json_len, json config,
           u32 tensor_count, per tensor: u16 name_len, name, u8 kind,
           kind 0 (ternary linear): u32 K, u32 N, u32 rows_padded, f32 scale,
                                    i32 col_sums[N], i8 codes[N * rows_padded]
           kind 1 (float32):        u8 ndim, u32 dims[ndim], f32 data

Linear weights are ``(K, N)`` = (input features, output features) in the
float checkpoint and output-major in the converted file.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import TernarizePolicy, TernaryMatrix, aligned_zeros, column_sums, ternarize_tensor
from .errors import ConversionError, FormatError
from .kernels import detect_backend
from .model import OUTPUT_NAME, ModelConfig, TernaryModel, float_shapes, linear_shapes

TF32_MAGIC = b"TF32"
TRNQ_MAGIC = b"TRNQ"
VERSION = 1
KIND_TERNARY = 0
KIND_FLOAT = 1


@dataclass
class FloatCheckpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def validate(self) -> None:
        expected = {**linear_shapes(self.config), **float_shapes(self.config)}
        names = set(self.tensors)
        unknown = names - set(expected) - {OUTPUT_NAME}
        if unknown:
            raise ConversionError(f"unknown tensor names: {sorted(unknown)}")
        missing = set(expected) - names
        if missing:
            raise ConversionError(f"missing tensors: {sorted(missing)}")
        if OUTPUT_NAME in names:
            expected[OUTPUT_NAME] = (self.config.dim, self.config.vocab_size)
        for name, shape in expected.items():
            if name in self.tensors and tuple(self.tensors[name].shape) != shape:
                raise ConversionError(f"{name}: expected shape {shape}, got {self.tensors[name].shape}")


@dataclass
class ConvertedModel:
    config: ModelConfig
    alignment: int
    tensors: dict[str, TernaryMatrix | np.ndarray]


@dataclass(frozen=True)
class MemoryReport:
    float32_bytes: int   # the ternarized tensors stored as float32
    code_bytes: int      # sum of N * rows_padded
    metadata_bytes: int  # per-record names, dims, scales, col_sums
    padding_bytes: int   # zero padding inside code_bytes
    aux_bytes: int       # float32 auxiliary records
    header_bytes: int
    file_bytes: int

    @property
    def ternary_bytes(self) -> int:
        return self.code_bytes + self.metadata_bytes

    @property
    def ratio(self) -> float:
        return self.float32_bytes / self.ternary_bytes if self.ternary_bytes else float("nan")

    @property
    def code_ratio(self) -> float:
        return self.float32_bytes / self.code_bytes if self.code_bytes else float("nan")

    def summary(self) -> str:
        mb = 1 / 2**20
        return (
            f"float32 linear weights : {self.float32_bytes * mb:10.3f} MB\n"
            f"int8 ternary codes     : {self.code_bytes * mb:10.3f} MB "
            f"(padding {self.padding_bytes * mb:.3f} MB)\n"
            f"ternary metadata       : {self.metadata_bytes * mb:10.3f} MB\n"
            f"float auxiliaries      : {self.aux_bytes * mb:10.3f} MB\n"
            f"file size              : {self.file_bytes * mb:10.3f} MB\n"
            f"reduction vs float32   : {self.ratio:.2f}x (codes only {self.code_ratio:.2f}x)"
        )


def _config_json(config: ModelConfig) -> bytes:
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what} file at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype, count=count)

    def name(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"bad tensor name in {self.what} file") from exc

    def config(self) -> ModelConfig:
        (n,) = self.unpack("<I")
        try:
            return ModelConfig.from_dict(json.loads(bytes(self.take(n)).decode("utf-8")))
        except (ValueError, TypeError) as exc:
            raise FormatError(f"bad config in {self.what} file: {exc}") from exc

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} unexpected trailing bytes in {self.what} file")


def _name_bytes(name: str) -> bytes:
    b = name.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _float_record(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()


def _read_float(r: _Reader) -> np.ndarray:
    (ndim,) = r.unpack("<B")
    dims = r.unpack(f"<{ndim}I")
    count = int(np.prod(dims, dtype=np.int64))
    return r.array("<f4", count).astype(np.float32).reshape(dims)


def save_checkpoint(ckpt: FloatCheckpoint, path) -> None:
    cfg = _config_json(ckpt.config)
    parts = [TF32_MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        parts += [_name_bytes(name), _float_record(arr)]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> FloatCheckpoint:
    r = _Reader(Path(path).read_bytes(), "checkpoint")
    if bytes(r.take(4)) != TF32_MAGIC:
        raise FormatError("not a float checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    config = r.config()
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = r.name()
        tensors[name] = _read_float(r)
    r.finish()
    return FloatCheckpoint(config, tensors)


def random_checkpoint(config: ModelConfig | None = None, seed: int = 0, tied: bool = False) -> FloatCheckpoint:
    """A seeded random float checkpoint for the given architecture (tests, demos, benchmarks)."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in float_shapes(config).items():
        if name == "tok_embeddings.weight":
            tensors[name] = rng.normal(0.0, 1.0, size=shape).astype(np.float32)
        else:
            tensors[name] = (1.0 + 0.1 * rng.normal(size=shape)).astype(np.float32)
    for name, (k, n) in linear_shapes(config).items():
        tensors[name] = rng.normal(0.0, k ** -0.5, size=(k, n)).astype(np.float32)
    if not tied:
        tensors[OUTPUT_NAME] = rng.normal(0.0, config.dim ** -0.5,
                                          size=(config.dim, config.vocab_size)).astype(np.float32)
    return FloatCheckpoint(config, tensors)


def resolve_alignment(alignment) -> int:
    if alignment in (None, "auto"):
        return detect_backend().alignment_bytes
    try:
        a = int(alignment)
    except (TypeError, ValueError):
        raise ConversionError(f"alignment must be auto, 16, 32 or 64, got {alignment!r}") from None
    if a not in (16, 32, 64):
        raise ConversionError(f"alignment must be auto, 16, 32 or 64, got {alignment!r}")
    return a


def convert(ckpt: FloatCheckpoint, policy: TernarizePolicy | None = None, alignment="auto",
            ternary_head: bool = False) -> ConvertedModel:
    """Ternarize every linear layer of ``ckpt``; auxiliaries are copied as float32.

    With ``ternary_head`` an untied output head is ternarized as well.
    """
    ckpt.validate()
    align = resolve_alignment(alignment)
    linear = set(linear_shapes(ckpt.config))
    if ternary_head:
        if OUTPUT_NAME not in ckpt.tensors:
            raise ConversionError("ternary_head requires an untied output.weight tensor")
        linear.add(OUTPUT_NAME)
    out = {}
    for name, arr in ckpt.tensors.items():
        if name in linear:
            out[name] = ternarize_tensor(arr, policy, align)
        else:
            out[name] = np.asarray(arr, dtype=np.float32)
    return ConvertedModel(ckpt.config, align, out)


def _ternary_record(t: TernaryMatrix) -> bytes:
    return b"".join([
        struct.pack("<IIIf", t.rows_logical, t.cols, t.rows_padded, t.tensor_scale),
        t.col_sums.astype("<i4").tobytes(),
        t.codes.tobytes(),
    ])


def save_converted(cm: ConvertedModel, path) -> None:
    cfg = _config_json(cm.config)
    parts = [TRNQ_MAGIC, struct.pack("<III", VERSION, cm.alignment, len(cfg)), cfg,
             struct.pack("<I", len(cm.tensors))]
    for name, t in cm.tensors.items():
        parts.append(_name_bytes(name))
        if isinstance(t, TernaryMatrix):
            parts += [struct.pack("<B", KIND_TERNARY), _ternary_record(t)]
        else:
            parts += [struct.pack("<B", KIND_FLOAT), _float_record(t)]
    Path(path).write_bytes(b"".join(parts))


def _read_ternary(r: _Reader, name: str) -> TernaryMatrix:
    k, n, kp, scale = r.unpack("<IIIf")
    if kp < k:
        raise FormatError(f"{name}: rows_padded {kp} < rows {k}")
    sums = r.array("<i4", n).astype(np.int32)
    codes = aligned_zeros((n, kp), np.int8)
    codes[...] = r.array(np.int8, n * kp).reshape(n, kp)
    t = TernaryMatrix(k, n, kp, codes, sums, scale)
    if not np.array_equal(column_sums(t), sums):
        raise FormatError(f"{name}: col_sum mismatch, file is corrupted")
    if codes.size and (codes.min() < -1 or codes.max() > 1):
        raise FormatError(f"{name}: codes outside {{-1, 0, +1}}, file is corrupted")
    if np.any(codes[:, k:]):
        raise FormatError(f"{name}: non-zero padding, file is corrupted")
    return t


def read_converted(path) -> ConvertedModel:
    """Parse and integrity-check a ``.trnq`` file."""
    r = _Reader(Path(path).read_bytes(), "converted model")
    if bytes(r.take(4)) != TRNQ_MAGIC:
        raise FormatError("not a converted model file (bad magic)")
    version, alignment = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported converted model version {version}")
    if alignment not in (16, 32, 64):
        raise FormatError(f"invalid alignment {alignment}")
    config = r.config()
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = r.name()
        (kind,) = r.unpack("<B")
        if kind == KIND_TERNARY:
            tensors[name] = _read_ternary(r, name)
        elif kind == KIND_FLOAT:
            tensors[name] = _read_float(r)
        else:
            raise FormatError(f"{name}: unknown record kind {kind}")
    r.finish()
    return ConvertedModel(config, alignment, tensors)


def load_converted(path, *, mode: str = "quantized", plan=None) -> TernaryModel:
    """Load a ``.trnq`` file into a ready model (no re-ternarization)."""
    cm = read_converted(path)
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]
    try:
        return TernaryModel(cm.config, cm.tensors, mode=mode, plan=plan,
                            model_id=f"{Path(path).name}:{digest}")
    except ValueError as exc:
        raise FormatError(f"inconsistent model file: {exc}") from exc


def model_from_checkpoint(ckpt: FloatCheckpoint, policy: TernarizePolicy | None = None, *,
                          alignment="auto", mode: str = "quantized", plan=None) -> TernaryModel:
    cm = convert(ckpt, policy, alignment)
    return TernaryModel(cm.config, cm.tensors, mode=mode, plan=plan)


def memory_report(source) -> MemoryReport:
    """Exact byte accounting of a converted model (path or in-memory)."""
    cm = source if isinstance(source, ConvertedModel) else read_converted(source)
    header = 4 + 12 + len(_config_json(cm.config)) + 4
    f32 = codes = meta = pad = aux = 0
    for name, t in cm.tensors.items():
        rec = 2 + len(name.encode("utf-8")) + 1
        if isinstance(t, TernaryMatrix):
            f32 += 4 * t.rows_logical * t.cols
            codes += t.cols * t.rows_padded
            pad += t.cols * (t.rows_padded - t.rows_logical)
            meta += rec + 16 + 4 * t.cols
        else:
            aux += rec + 1 + 4 * np.ndim(t) + 4 * int(np.size(t))
    return MemoryReport(f32, codes, meta, pad, aux, header, header + codes + meta + aux)


def convert_file(src, dst, policy: TernarizePolicy | None = None, alignment="auto",
                 ternary_head: bool = False) -> MemoryReport:
    cm = convert(load_checkpoint(src), policy, alignment, ternary_head)
    save_converted(cm, dst)
    return memory_report(cm)
