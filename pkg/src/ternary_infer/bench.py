"""Prefill/decode benchmark harness (pp + tg methodology) and report writers.

One entry is produced per requested thread count. Each entry runs ``warmup``
discarded passes, then ``repetitions`` measured passes of: prefill a
``prompt_tokens`` prompt, pick the first token (TTFT), then ``gen_tokens``
single-token decode steps (tg throughput). Reported figures are medians over
the measured passes.

Report JSON layout (``schema_version`` 1)::

    {"schema_version": 1, "model_id": str, "created_at": str,
     "spec": {"prompt_tokens", "gen_tokens", "threads_list", "repetitions",
              "warmup", "backend_override", "seed"},
     "entries": [{"backend", "threads", "model_id", "prompt_tokens",
                  "gen_tokens", "ttft_ms", "pp_tok_s", "tg_tok_s",
                  "peak_rss_bytes", "peak_rss_is_peak", "started_at",
                  "finished_at", "samples": [{"prefill_seconds",
                  "ttft_seconds", "decode_seconds", "tokens_sha1"}]}]}
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import statistics
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContextOverflowError
from .kernels import KernelPlan, detect_backend
from .model import GenerationParams, GenerationTimings, TernaryModel, iter_generate

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MIN_TIMER_SECONDS = 1e-3

_SAMPLE_SCHEMA = {
    "type": "object",
    "required": ["prefill_seconds", "ttft_seconds", "decode_seconds", "tokens_sha1"],
    "properties": {
        "prefill_seconds": {"type": "number", "exclusiveMinimum": 0},
        "ttft_seconds": {"type": "number", "exclusiveMinimum": 0},
        "decode_seconds": {"type": "number", "minimum": 0},
        "tokens_sha1": {"type": "string"},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "model_id", "created_at", "spec", "entries"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model_id": {"type": "string"},
        "created_at": {"type": "string"},
        "spec": {"type": "object"},
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["backend", "threads", "model_id", "prompt_tokens", "gen_tokens",
                             "ttft_ms", "pp_tok_s", "tg_tok_s", "peak_rss_bytes",
                             "peak_rss_is_peak", "samples"],
                "properties": {
                    "backend": {"type": "string"},
                    "threads": {"type": "integer", "minimum": 1},
                    "model_id": {"type": "string"},
                    "prompt_tokens": {"type": "integer", "minimum": 1},
                    "gen_tokens": {"type": "integer", "minimum": 0},
                    "ttft_ms": {"type": "number", "exclusiveMinimum": 0},
                    "pp_tok_s": {"type": "number", "exclusiveMinimum": 0},
                    "tg_tok_s": {"type": "number", "minimum": 0},
                    "peak_rss_bytes": {"type": "integer", "minimum": 0},
                    "peak_rss_is_peak": {"type": "boolean"},
                    "samples": {"type": "array", "minItems": 1, "items": _SAMPLE_SCHEMA},
                },
            },
        },
    },
}


def rss_reading() -> tuple[int, bool]:
    """``(bytes, is_peak)``: peak RSS when the OS exposes it, else current RSS flagged non-peak."""
    # On Linux ru_maxrss also covers the pre-exec image of a forked parent, so
    # the process's own high-water mark is read from /proc first.
    try:
        with open("/proc/self/status", encoding="ascii") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024, True
    except (OSError, ValueError, IndexError):
        pass
    try:
        import resource

        maxrss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        # ru_maxrss is bytes on macOS, kilobytes elsewhere.
        return int(maxrss if sys.platform == "darwin" else maxrss * 1024), True
    except (ImportError, OSError):
        pass
    try:
        import psutil

        info = psutil.Process().memory_info()
        peak = getattr(info, "peak_wset", None)
        if peak is not None:
            return int(peak), True
        return int(info.rss), False
    except Exception:  # noqa: BLE001 - best effort on exotic platforms
        return 0, False


def peak_rss() -> int:
    return rss_reading()[0]


@dataclass(frozen=True)
class BenchSpec:
    prompt_tokens: int = 128
    gen_tokens: int = 128
    threads_list: tuple[int, ...] = (1,)
    repetitions: int = 3
    warmup: int = 1
    backend_override: str | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "threads_list", tuple(int(t) for t in self.threads_list))
        if self.prompt_tokens < 1 or self.gen_tokens < 0:
            raise ConfigurationError("prompt_tokens must be >= 1 and gen_tokens >= 0")
        if self.repetitions < 1 or self.warmup < 0:
            raise ConfigurationError("repetitions must be >= 1 and warmup >= 0")
        if not self.threads_list or min(self.threads_list) < 1:
            raise ConfigurationError("threads_list must contain positive thread counts")


@dataclass
class BenchSample:
    prefill_seconds: float
    ttft_seconds: float
    decode_seconds: float
    tokens_sha1: str


@dataclass
class BenchEntry:
    backend: str
    threads: int
    model_id: str
    prompt_tokens: int
    gen_tokens: int
    ttft_ms: float
    pp_tok_s: float
    tg_tok_s: float
    peak_rss_bytes: int
    peak_rss_is_peak: bool
    started_at: str = ""
    finished_at: str = ""
    samples: list[BenchSample] = field(default_factory=list)


@dataclass
class BenchReport:
    model_id: str
    spec: dict
    entries: list[BenchEntry]
    created_at: str = ""
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> BenchReport:
        entries = [
            BenchEntry(**{**e, "samples": [BenchSample(**s) for s in e["samples"]]})
            for e in d["entries"]
        ]
        return cls(d["model_id"], d["spec"], entries, d["created_at"], d["schema_version"])


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def synthetic_prompt(vocab_size: int, n: int, seed: int) -> list[int]:
    return np.random.default_rng(seed).integers(0, vocab_size, size=n).tolist()


def tokens_per_second(tokens: int, seconds: float) -> float:
    return tokens / seconds if seconds > 0 else 0.0


def _run_once(model: TernaryModel, prompt: list[int], gen_tokens: int) -> BenchSample:
    cache = model.new_cache()
    timings = GenerationTimings()
    it = iter_generate(model, prompt, GenerationParams(max_new_tokens=gen_tokens + 1), cache,
                       timings=timings)
    # First token comes from the prefill; each further token costs one decode step.
    tokens = [next(it) for _ in range(gen_tokens + 1)]
    digest = hashlib.sha1(np.asarray(tokens, dtype=np.int32).tobytes()).hexdigest()
    return BenchSample(timings.prefill_seconds, timings.ttft_seconds, timings.decode_seconds, digest)


def run_bench(model: TernaryModel, spec: BenchSpec, prompt_ids=None) -> BenchReport:
    """Measure TTFT, prefill and decode throughput and peak RSS for each thread count."""
    cfg = model.config
    if spec.prompt_tokens + spec.gen_tokens > cfg.max_seq_len:
        raise ContextOverflowError(
            f"pp{spec.prompt_tokens} + tg{spec.gen_tokens} exceeds max_seq_len {cfg.max_seq_len}"
        )
    if prompt_ids is None:
        prompt = synthetic_prompt(cfg.vocab_size, spec.prompt_tokens, spec.seed)
    else:
        prompt = [int(t) for t in prompt_ids][: spec.prompt_tokens]
        if len(prompt) != spec.prompt_tokens:
            raise ConfigurationError(f"prompt has {len(prompt)} tokens, spec asks for {spec.prompt_tokens}")
    backend = detect_backend(spec.backend_override)

    entries = []
    for threads in spec.threads_list:
        m = model.with_options(plan=KernelPlan(backend, threads))
        started = _now()
        for _ in range(spec.warmup):
            _run_once(m, prompt, spec.gen_tokens)
        reps = spec.repetitions
        samples = [_run_once(m, prompt, spec.gen_tokens) for _ in range(reps)]
        if min(s.prefill_seconds for s in samples) < MIN_TIMER_SECONDS:
            log.warning("prefill below %.0f ms timer floor; doubling repetitions", MIN_TIMER_SECONDS * 1e3)
            samples += [_run_once(m, prompt, spec.gen_tokens) for _ in range(reps)]
        rss, is_peak = rss_reading()
        entries.append(BenchEntry(
            backend=backend.id,
            threads=threads,
            model_id=model.model_id,
            prompt_tokens=spec.prompt_tokens,
            gen_tokens=spec.gen_tokens,
            ttft_ms=statistics.median(s.ttft_seconds for s in samples) * 1e3,
            pp_tok_s=statistics.median(tokens_per_second(spec.prompt_tokens, s.prefill_seconds)
                                       for s in samples),
            tg_tok_s=statistics.median(tokens_per_second(spec.gen_tokens, s.decode_seconds)
                                       for s in samples),
            peak_rss_bytes=rss,
            peak_rss_is_peak=is_peak,
            started_at=started,
            finished_at=_now(),
            samples=samples,
        ))
    return BenchReport(model.model_id, dataclasses.asdict(spec), entries, _now())


def _text_table(report: BenchReport) -> str:
    cols = [f"{e.backend} x{e.threads}" for e in report.entries]
    rows = [
        ("Memory (MB)", [f"{e.peak_rss_bytes / 2**20:,.1f}" for e in report.entries]),
        ("TTFT (ms)", [f"{e.ttft_ms:,.2f}" for e in report.entries]),
        ("Prefill (tok/s)", [f"{e.pp_tok_s:,.1f}" for e in report.entries]),
        ("Throughput (tok/s)", [f"{e.tg_tok_s:,.1f}" for e in report.entries]),
    ]
    width0 = max(len("Metric"), *(len(r[0]) for r in rows))
    widths = [max(len(c), *(len(r[1][i]) for r in rows)) for i, c in enumerate(cols)]
    lines = [f"model: {report.model_id}",
             " | ".join(["Metric".ljust(width0), *(c.rjust(w) for c, w in zip(cols, widths))])]
    lines.append("-+-".join(["-" * width0, *("-" * w for w in widths)]))
    for label, vals in rows:
        lines.append(" | ".join([label.ljust(width0), *(v.rjust(w) for v, w in zip(vals, widths))]))
    return "\n".join(lines) + "\n"


CSV_FIELDS = ["model_id", "backend", "threads", "repetition", "prompt_tokens", "gen_tokens",
              "prefill_seconds", "ttft_ms", "decode_seconds", "pp_tok_s", "tg_tok_s", "peak_rss_bytes"]


def _csv(report: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for e in report.entries:
        for i, s in enumerate(e.samples):
            w.writerow({
                "model_id": e.model_id, "backend": e.backend, "threads": e.threads, "repetition": i,
                "prompt_tokens": e.prompt_tokens, "gen_tokens": e.gen_tokens,
                "prefill_seconds": s.prefill_seconds, "ttft_ms": s.ttft_seconds * 1e3,
                "decode_seconds": s.decode_seconds,
                "pp_tok_s": tokens_per_second(e.prompt_tokens, s.prefill_seconds),
                "tg_tok_s": tokens_per_second(e.gen_tokens, s.decode_seconds),
                "peak_rss_bytes": e.peak_rss_bytes,
            })
    return buf.getvalue()


def format_report(report: BenchReport, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "text":
        return _text_table(report)
    if fmt == "csv":
        return _csv(report)
    raise ConfigurationError(f"unknown report format {fmt!r}; expected json, text or csv")


def emit_report(report: BenchReport, fmt: str = "json", path=None) -> None:
    """Write the report to ``path`` (stdout when None)."""
    text = format_report(report, fmt)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)
