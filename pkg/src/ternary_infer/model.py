"""Decoder-only transformer whose linear layers run on ternary kernels.

Architecture: pre-norm RMSNorm, rotary position embeddings, gated MLP
``(up * silu(gate)) @ down``, float embeddings and output head (tied to the
embedding when no ``output.weight`` is present).
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from itertools import islice
from typing import Iterator

import numpy as np

from .core import TernaryMatrix
from .errors import ConfigurationError, ContextOverflowError, DecodeError, ShapeError
from .kernels import KernelPlan, linear_forward

QUANTIZED = "quantized"
FLOAT_REFERENCE = "float_reference"
MODES = (QUANTIZED, FLOAT_REFERENCE)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 258
    dim: int = 128
    n_layers: int = 4
    n_heads: int = 4
    ffn_dim: int = 256
    max_seq_len: int = 512
    norm_eps: float = 1e-5
    rope_theta: float = 10000.0

    def __post_init__(self):
        for name in ("vocab_size", "dim", "n_layers", "n_heads", "ffn_dim", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.dim % self.n_heads:
            raise ConfigurationError("dim must be divisible by n_heads")
        if self.head_dim % 2:
            raise ConfigurationError("head dimension must be even for rotary embeddings")

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        missing = known - set(d)
        if missing:
            raise ConfigurationError(f"missing config keys: {sorted(missing)}")
        return cls(**d)


def linear_shapes(config: ModelConfig) -> dict[str, tuple[int, int]]:
    """Names and ``(K, N)`` shapes of every ternary linear layer."""
    d, f = config.dim, config.ffn_dim
    shapes = {}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + f"attention.{name}.weight"] = (d, d)
        shapes[p + "feed_forward.w_up.weight"] = (d, f)
        shapes[p + "feed_forward.w_gate.weight"] = (d, f)
        shapes[p + "feed_forward.w_down.weight"] = (f, d)
    return shapes


def float_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of the float auxiliaries (the optional head excluded)."""
    shapes = {"tok_embeddings.weight": (config.vocab_size, config.dim)}
    for i in range(config.n_layers):
        shapes[f"layers.{i}.attention_norm.weight"] = (config.dim,)
        shapes[f"layers.{i}.ffn_norm.weight"] = (config.dim,)
    shapes["norm.weight"] = (config.dim,)
    return shapes


OUTPUT_NAME = "output.weight"


@dataclass
class OpCounter:
    """Multiply-accumulate counts, split by where they happen."""

    linear_macs: int = 0
    attention_macs: int = 0
    head_macs: int = 0

    @property
    def total(self) -> int:
        return self.linear_macs + self.attention_macs + self.head_macs


class KVCache:
    """Pre-allocated per-layer key/value buffers with a fill cursor.

    The buffers are allocated once here; forward passes only write into
    slices of them.
    """

    def __init__(self, config: ModelConfig):
        shape = (config.n_layers, config.max_seq_len, config.dim)
        self.max_seq_len = config.max_seq_len
        self.keys = np.zeros(shape, dtype=np.float32)
        self.values = np.zeros(shape, dtype=np.float32)
        self.filled = 0
        self.allocations = 1

    def reset(self) -> None:
        self.filled = 0

    @property
    def remaining(self) -> int:
        return self.max_seq_len - self.filled


class TernaryModel:
    """Immutable model weights plus the kernel plan and inference mode.

    Linear weights are TernaryMatrix instances; ``float_reference`` mode uses
    their dequantized float32 copies (``codes * tensor_scale``), so both modes
    see the same effective weights.
    """

    def __init__(self, config: ModelConfig, tensors: dict, *, mode: str = QUANTIZED,
                 plan: KernelPlan | None = None, model_id: str = "in-memory"):
        if mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
        self.config = config
        self.mode = mode
        self.model_id = model_id
        self.plan = plan or KernelPlan()
        self._check_schema(tensors)

        align = self.plan.backend.alignment_bytes
        self.linears: dict[str, TernaryMatrix] = {}
        self.floats: dict[str, np.ndarray] = {}
        for name, t in tensors.items():
            if isinstance(t, TernaryMatrix):
                self.linears[name] = t if t.rows_padded % align == 0 else t.repad(align)
            else:
                self.floats[name] = np.ascontiguousarray(t, dtype=np.float32)
        self._dense: dict[str, np.ndarray] = {}

        hd = config.head_dim
        inv = config.rope_theta ** (-np.arange(0, hd, 2, dtype=np.float64) / hd)
        angles = np.outer(np.arange(config.max_seq_len, dtype=np.float64), inv)
        self._cos = np.cos(angles).astype(np.float32)
        self._sin = np.sin(angles).astype(np.float32)

    def _check_schema(self, tensors: dict) -> None:
        cfg = self.config
        expected = {**linear_shapes(cfg), **float_shapes(cfg)}
        names = set(tensors)
        missing = set(expected) - names
        extra = names - set(expected) - {OUTPUT_NAME}
        if missing or extra:
            raise ShapeError(f"tensor schema mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in expected.items():
            t = tensors[name]
            got = t.shape if isinstance(t, TernaryMatrix) else np.shape(t)
            if tuple(got) != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tuple(got)}")
            if name in linear_shapes(cfg) and not isinstance(t, TernaryMatrix):
                raise ShapeError(f"{name} must be a TernaryMatrix")
        if OUTPUT_NAME in tensors:
            got = tensors[OUTPUT_NAME].shape if isinstance(tensors[OUTPUT_NAME], TernaryMatrix) \
                else np.shape(tensors[OUTPUT_NAME])
            if tuple(got) != (cfg.dim, cfg.vocab_size):
                raise ShapeError(f"{OUTPUT_NAME}: expected {(cfg.dim, cfg.vocab_size)}, got {tuple(got)}")

    def with_options(self, *, mode: str | None = None, plan: KernelPlan | None = None) -> TernaryModel:
        """A view of the same weights with a different mode and/or kernel plan."""
        other = object.__new__(TernaryModel)
        other.__dict__.update(self.__dict__)
        if mode is not None:
            if mode not in MODES:
                raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
            other.mode = mode
        if plan is not None:
            other.plan = plan
            align = plan.backend.alignment_bytes
            other.linears = {n: (t if t.rows_padded % align == 0 else t.repad(align))
                             for n, t in self.linears.items()}
        return other

    @property
    def tied_head(self) -> bool:
        return OUTPUT_NAME not in self.linears and OUTPUT_NAME not in self.floats

    def dense(self, name: str) -> np.ndarray:
        w = self._dense.get(name)
        if w is None:
            w = self._dense[name] = self.linears[name].dense(np.float32)
        return w

    def linear(self, x: np.ndarray, name: str, mode: str) -> np.ndarray:
        if mode == QUANTIZED:
            return linear_forward(x, self.linears[name], self.plan)
        return x @ self.dense(name)

    def head(self, h: np.ndarray, mode: str) -> np.ndarray:
        if OUTPUT_NAME in self.linears:
            return self.linear(h, OUTPUT_NAME, mode)
        if OUTPUT_NAME in self.floats:
            return h @ self.floats[OUTPUT_NAME]
        return h @ self.floats["tok_embeddings.weight"].T

    def new_cache(self) -> KVCache:
        return KVCache(self.config)

    def forward(self, token_ids, cache: KVCache, **kw) -> np.ndarray:
        return forward(self, token_ids, cache, **kw)

    def generate(self, prompt_ids, params: GenerationParams | None = None, cache: KVCache | None = None, **kw):
        return generate(self, prompt_ids, params or GenerationParams(), cache, **kw)


def rms_norm(x: np.ndarray, weight: np.ndarray, eps: float) -> np.ndarray:
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return (x / np.sqrt(ms + np.float32(eps))) * weight


def silu(x: np.ndarray) -> np.ndarray:
    return x / (np.float32(1.0) + np.exp(-x))


def apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate ``(T, H, hd)`` by per-position angles; halves of each head are paired."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    c, s = cos[:, None, :], sin[:, None, :]
    return np.concatenate([x1 * c - x2 * s, x1 * s + x2 * c], axis=-1)


def _attend(q: np.ndarray, keys: np.ndarray, values: np.ndarray, scale: np.float32) -> np.ndarray:
    # One query position against every cached position; q (H, hd), keys/values (L, H, hd).
    # Elementwise reductions keep each position's result independent of batch shape.
    scores = (keys * q).sum(axis=-1) * scale
    scores -= scores.max(axis=0)
    p = np.exp(scores)
    p /= p.sum(axis=0)
    return (p[:, :, None] * values).sum(axis=0)


def forward(model: TernaryModel, token_ids, cache: KVCache, *, mode: str | None = None,
            counter: OpCounter | None = None) -> np.ndarray:
    """Run new tokens through the model, appending their keys/values to ``cache``.

    Returns float32 logits of shape ``(len(token_ids), vocab_size)`` for the new
    positions only.
    """
    cfg = model.config
    mode = mode or model.mode
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    t = ids.size
    start = cache.filled
    if start + t > cfg.max_seq_len:
        raise ContextOverflowError(
            f"{start} cached + {t} new tokens exceeds max_seq_len {cfg.max_seq_len}"
        )
    if t and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise DecodeError(f"token ids must lie in [0, {cfg.vocab_size})")

    nh, hd, d = cfg.n_heads, cfg.head_dim, cfg.dim
    scale = np.float32(1.0 / np.sqrt(hd))
    cos, sin = model._cos[start:start + t], model._sin[start:start + t]
    f = model.floats
    h = f["tok_embeddings.weight"][ids]

    for li in range(cfg.n_layers):
        p = f"layers.{li}."
        x = rms_norm(h, f[p + "attention_norm.weight"], cfg.norm_eps)
        q = model.linear(x, p + "attention.wq.weight", mode).reshape(t, nh, hd)
        k = model.linear(x, p + "attention.wk.weight", mode).reshape(t, nh, hd)
        v = model.linear(x, p + "attention.wv.weight", mode)
        q = apply_rope(q, cos, sin)
        k = apply_rope(k, cos, sin)
        cache.keys[li, start:start + t] = k.reshape(t, d)
        cache.values[li, start:start + t] = v

        ctx_k = cache.keys[li].reshape(cfg.max_seq_len, nh, hd)
        ctx_v = cache.values[li].reshape(cfg.max_seq_len, nh, hd)
        att = np.empty((t, d), dtype=np.float32)
        for i in range(t):
            n = start + i + 1
            att[i] = _attend(q[i], ctx_k[:n], ctx_v[:n], scale).reshape(d)
            if counter is not None:
                counter.attention_macs += 2 * n * d
        h = h + model.linear(att, p + "attention.wo.weight", mode)

        x = rms_norm(h, f[p + "ffn_norm.weight"], cfg.norm_eps)
        up = model.linear(x, p + "feed_forward.w_up.weight", mode)
        gate = model.linear(x, p + "feed_forward.w_gate.weight", mode)
        h = h + model.linear(up * silu(gate), p + "feed_forward.w_down.weight", mode)
        if counter is not None:
            counter.linear_macs += t * (4 * d * d + 3 * d * cfg.ffn_dim)

    h = rms_norm(h, f["norm.weight"], cfg.norm_eps)
    logits = model.head(h, mode)
    if counter is not None:
        counter.head_macs += t * d * cfg.vocab_size
    cache.filled = start + t
    return logits


GREEDY = "greedy"
SAMPLE = "temperature_sampling"


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 128
    strategy: str = GREEDY
    temperature: float = 1.0
    seed: int = 0
    stop_token: int | None = None

    def __post_init__(self):
        if self.max_new_tokens < 0:
            raise ConfigurationError("max_new_tokens must be >= 0")
        if self.strategy not in (GREEDY, SAMPLE):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.strategy == SAMPLE and not self.temperature > 0:
            raise ConfigurationError("temperature must be > 0")


@dataclass
class GenerationTimings:
    """Wall-clock phases of one generation; TTFT excludes tokenization."""

    prefill_seconds: float = 0.0
    ttft_seconds: float = 0.0
    decode_seconds: float = 0.0
    decode_steps: int = 0
    step_seconds: list[float] = field(default_factory=list)


class Sampler:
    """Greedy argmax (lowest id wins ties) or seeded temperature sampling."""

    def __init__(self, params: GenerationParams):
        self.params = params
        self.rng = np.random.default_rng(params.seed)

    def __call__(self, logits: np.ndarray) -> int:
        if self.params.strategy == GREEDY:
            return int(np.argmax(logits))
        z = logits.astype(np.float64) / self.params.temperature
        z -= z.max()
        p = np.exp(z)
        c = np.cumsum(p)
        idx = int(np.searchsorted(c, self.rng.random() * c[-1], side="right"))
        return min(idx, logits.size - 1)


def iter_generate(model: TernaryModel, prompt_ids, params: GenerationParams, cache: KVCache, *,
                  timings: GenerationTimings | None = None, mode: str | None = None,
                  counter: OpCounter | None = None) -> Iterator[int]:
    """Lazily yield new tokens: the first from the prefill, each later one from one decode step.

    A decode forward only runs when the next token is requested, so drawing n
    tokens costs one prefill plus n - 1 single-token forwards.
    """
    prompt = list(prompt_ids)
    if not prompt:
        raise ConfigurationError("prompt must be non-empty")
    sample = Sampler(params)
    t0 = time.perf_counter()
    logits = forward(model, prompt, cache, mode=mode, counter=counter)
    t1 = time.perf_counter()
    tok = sample(logits[-1])
    if timings is not None:
        timings.prefill_seconds = t1 - t0
        timings.ttft_seconds = time.perf_counter() - t0
    yield tok
    while True:
        ts = time.perf_counter()
        logits = forward(model, [tok], cache, mode=mode, counter=counter)
        tok = sample(logits[-1])
        if timings is not None:
            dt = time.perf_counter() - ts
            timings.decode_seconds += dt
            timings.decode_steps += 1
            timings.step_seconds.append(dt)
        yield tok


def generate(model: TernaryModel, prompt_ids, params: GenerationParams, cache: KVCache | None = None, *,
             timings: GenerationTimings | None = None, mode: str | None = None,
             counter: OpCounter | None = None) -> list[int]:
    """Prefill the prompt, then decode autoregressively; returns prompt + new tokens."""
    prompt = [int(t) for t in prompt_ids]
    if not prompt:
        raise ConfigurationError("prompt must be non-empty")
    cache = cache if cache is not None else model.new_cache()
    if cache.filled + len(prompt) + params.max_new_tokens > model.config.max_seq_len:
        raise ContextOverflowError(
            f"{cache.filled} cached + {len(prompt)} prompt + {params.max_new_tokens} new tokens "
            f"exceeds max_seq_len {model.config.max_seq_len}"
        )
    if params.max_new_tokens == 0:
        return prompt
    out = list(prompt)
    for tok in islice(iter_generate(model, prompt, params, cache, timings=timings, mode=mode,
                                    counter=counter), params.max_new_tokens):
        out.append(tok)
        if params.stop_token is not None and tok == params.stop_token:
            break
    return out


def generate_without_cache(model: TernaryModel, prompt_ids, params: GenerationParams, *,
                           mode: str | None = None, counter: OpCounter | None = None) -> list[int]:
    """Same contract as :func:`generate`, but every step re-runs the whole sequence."""
    seq = [int(t) for t in prompt_ids]
    sample = Sampler(params)
    for _ in range(params.max_new_tokens):
        logits = forward(model, seq, model.new_cache(), mode=mode, counter=counter)
        tok = sample(logits[-1])
        seq.append(tok)
        if params.stop_token is not None and tok == params.stop_token:
            break
    return seq


def max_logit_difference(model: TernaryModel, prompt_ids) -> float:
    """Largest |quantized - float_reference| over every position and vocabulary entry."""
    q = forward(model, prompt_ids, model.new_cache(), mode=QUANTIZED)
    r = forward(model, prompt_ids, model.new_cache(), mode=FLOAT_REFERENCE)
    return float(np.max(np.abs(q.astype(np.float64) - r.astype(np.float64))))
