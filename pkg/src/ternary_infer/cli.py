"""Command-line entry point: ``ternary-infer {generate,chat,benchmark,convert}``.

Exit codes: 0 success, 2 usage / missing model / bad configuration,
3 context overflow, 4 I/O or corrupted file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import BenchSpec, emit_report, run_bench
from .chat import ChatSession
from .convert import convert_file, load_converted
from .core import TernarizePolicy
from .errors import ConfigurationError, ContextOverflowError, FormatError
from .kernels import KernelPlan, detect_backend
from .model import (
    FLOAT_REFERENCE,
    GREEDY,
    QUANTIZED,
    SAMPLE,
    GenerationParams,
    GenerationTimings,
    generate,
    max_logit_difference,
)
from .tokenizer import EOS, ByteTokenizer

EXIT_OK, EXIT_USAGE, EXIT_CONTEXT, EXIT_IO = 0, 2, 3, 4
DEFAULT_SEED = 1234


class _UsageError(Exception):
    pass


def _thread_list(s: str) -> list[int]:
    try:
        out = [int(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {s!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("thread counts must be positive")
    return out


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonnegative(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _model_args(p: argparse.ArgumentParser, thread_list: bool = False) -> None:
    p.add_argument("--model", required=True, help="converted .trnq model file")
    if thread_list:
        p.add_argument("--threads", type=_thread_list, default=[1], help="comma-separated thread counts")
    else:
        p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("--backend", default=None,
                   help="force a kernel backend (scalar, neon, avx512vnni, avxvnni)")


def _sampling_args(p: argparse.ArgumentParser, max_new: int) -> None:
    p.add_argument("--max-new-tokens", type=_nonnegative, default=max_new)
    p.add_argument("--mode", choices=["quantized", "float-reference"], default="quantized")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--temperature", type=float, default=0.0,
                   help="0 selects greedy decoding; > 0 samples at that temperature")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ternary-infer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="produce a single completion")
    _model_args(g)
    _sampling_args(g, 128)
    g.add_argument("text", nargs="?", help="prompt text (alternative to --prompt)")
    g.add_argument("--prompt", default=None)
    g.add_argument("--verbose", action="store_true", help="report timings and the quantized/float logit gap")

    c = sub.add_parser("chat", help="interactive session with conversation history")
    _model_args(c)
    _sampling_args(c, 64)

    b = sub.add_parser("benchmark", help="measure TTFT, throughput and memory")
    _model_args(b, thread_list=True)
    b.add_argument("--pp", type=_positive, default=128, help="prompt tokens")
    b.add_argument("--tg", type=_nonnegative, default=128, help="generated tokens")
    b.add_argument("--repetitions", type=_positive, default=3)
    b.add_argument("--warmup", type=_nonnegative, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--format", choices=["json", "text", "csv"], default="text")
    b.add_argument("--output", default=None, help="report path (stdout by default)")

    v = sub.add_parser("convert", help="convert a float .tf32 checkpoint to .trnq")
    v.add_argument("--in", dest="src", required=True)
    v.add_argument("--out", dest="dst", required=True)
    v.add_argument("--alignment", choices=["auto", "16", "32", "64"], default="auto")
    v.add_argument("--gamma", choices=["mean_abs_per_tensor", "fixed_one"], default="mean_abs_per_tensor")
    v.add_argument("--ternary-head", action="store_true")
    return parser


def _load(args, mode: str = QUANTIZED):
    if not Path(args.model).is_file():
        raise _UsageError(f"model file not found: {args.model}")
    threads = args.threads if isinstance(args.threads, int) else 1
    plan = KernelPlan(detect_backend(args.backend), threads)
    return load_converted(args.model, mode=mode, plan=plan)


def _params(args, stop_token=None) -> GenerationParams:
    if args.temperature > 0:
        return GenerationParams(args.max_new_tokens, SAMPLE, args.temperature, args.seed, stop_token)
    return GenerationParams(args.max_new_tokens, GREEDY, 1.0, args.seed, stop_token)


def _write(data: bytes) -> None:
    sys.stdout.buffer.write(data)
    sys.stdout.buffer.flush()


def cmd_generate(args) -> int:
    prompt = args.prompt if args.prompt is not None else args.text
    if not prompt:
        raise _UsageError("a non-empty prompt is required (--prompt or positional text)")
    mode = FLOAT_REFERENCE if args.mode == "float-reference" else QUANTIZED
    model = _load(args, mode)
    tok = ByteTokenizer(model.config.vocab_size)
    ids = tok.encode(prompt)
    timings = GenerationTimings()
    out = generate(model, ids, _params(args, EOS), timings=timings)
    _write(tok.decode(out) + b"\n")
    if args.verbose:
        gap = max_logit_difference(model, ids)
        new = len(out) - len(ids)
        print(f"backend={model.plan.backend.id} threads={model.plan.threads} mode={mode} "
              f"new_tokens={new} ttft_ms={timings.ttft_seconds * 1e3:.2f} "
              f"max_logit_difference={gap:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_chat(args) -> int:
    mode = FLOAT_REFERENCE if args.mode == "float-reference" else QUANTIZED
    model = _load(args, mode)
    session = ChatSession(model, _params(args, EOS))
    interactive = sys.stdin.isatty()
    while True:
        if interactive:
            print("> ", end="", flush=True)
        line = sys.stdin.readline()
        if not line:
            return EXIT_OK
        line = line.rstrip("\n")
        if line.strip() == "/exit":
            return EXIT_OK
        if line.strip() == "/reset":
            session.reset()
            print("[history cleared]", flush=True)
            continue
        reply = session.send(line)
        _write(b"Assistant: " + reply + b"\n")


def cmd_benchmark(args) -> int:
    threads = args.threads
    model = _load(args)
    spec = BenchSpec(args.pp, args.tg, tuple(threads), args.repetitions, args.warmup, args.backend, args.seed)
    report = run_bench(model, spec)
    emit_report(report, args.format, args.output)
    return EXIT_OK


def cmd_convert(args) -> int:
    if not Path(args.src).is_file():
        raise _UsageError(f"checkpoint not found: {args.src}")
    report = convert_file(args.src, args.dst, TernarizePolicy(args.gamma), args.alignment, args.ternary_head)
    print(f"wrote {args.dst}")
    print(report.summary())
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "chat": cmd_chat, "benchmark": cmd_benchmark, "convert": cmd_convert}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except (_UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContextOverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTEXT
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
