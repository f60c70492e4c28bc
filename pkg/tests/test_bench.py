import csv
import io
import json
import logging

import jsonschema
import numpy as np
import pytest

from ternary_infer.bench import (
    REPORT_SCHEMA,
    BenchReport,
    BenchSpec,
    emit_report,
    format_report,
    peak_rss,
    rss_reading,
    run_bench,
    synthetic_prompt,
    tokens_per_second,
)
from ternary_infer.errors import ConfigurationError, ContextOverflowError


@pytest.fixture(scope="module")
def small_report(request):
    model = request.getfixturevalue("tiny_model")
    spec = BenchSpec(prompt_tokens=16, gen_tokens=8, threads_list=(1, 2), repetitions=3, warmup=1,
                     backend_override="scalar", seed=3)
    return run_bench(model, spec)


class TestRss:
    def test_positive_and_flagged(self):
        value, is_peak = rss_reading()
        assert value > 0 and isinstance(is_peak, bool)

    def test_monotone(self):
        a = peak_rss()
        b = peak_rss()
        assert b >= a

    def test_dominates_heap(self):
        before = peak_rss()
        block = np.ones(16 * 2**20, np.uint8)
        assert peak_rss() >= block.nbytes
        assert peak_rss() >= before


class TestSpec:
    def test_defaults(self):
        s = BenchSpec()
        assert (s.prompt_tokens, s.gen_tokens, s.repetitions, s.warmup) == (128, 128, 3, 1)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            BenchSpec(repetitions=0)
        with pytest.raises(ConfigurationError):
            BenchSpec(threads_list=(0,))

    def test_context_overflow(self, tiny_model):
        with pytest.raises(ContextOverflowError):
            run_bench(tiny_model, BenchSpec(prompt_tokens=90, gen_tokens=10))

    def test_synthetic_prompt_seeded(self):
        assert synthetic_prompt(258, 8, 1) == synthetic_prompt(258, 8, 1)
        assert all(0 <= t < 258 for t in synthetic_prompt(258, 100, 2))


def test_throughput_arithmetic():
    assert tokens_per_second(128, 2.0) == 64.0


class TestRunBench:
    def test_entries_in_order(self, small_report):
        assert [e.threads for e in small_report.entries] == [1, 2]
        assert len({e.model_id for e in small_report.entries}) == 1

    def test_fields_populated(self, small_report):
        for e in small_report.entries:
            assert e.pp_tok_s > 0 and e.tg_tok_s > 0 and e.ttft_ms > 0 and e.peak_rss_bytes > 0
            assert e.backend == "portable_scalar"
            assert len(e.samples) >= 3

    def test_medians(self, small_report):
        e = small_report.entries[0]
        tg = sorted(8 / s.decode_seconds for s in e.samples)
        assert e.tg_tok_s == pytest.approx(float(np.median(tg)))
        ttft = sorted(s.ttft_seconds for s in e.samples)
        assert e.ttft_ms == pytest.approx(float(np.median(ttft)) * 1e3)

    def test_ttft_covers_prefill(self, small_report):
        for e in small_report.entries:
            for s in e.samples:
                assert s.ttft_seconds >= s.prefill_seconds

    def test_outputs_identical_across_repetitions(self, small_report):
        """B1: measuring never changes the generated tokens."""
        digests = {s.tokens_sha1 for e in small_report.entries for s in e.samples}
        assert len(digests) == 1

    def test_schema_valid(self, small_report):
        jsonschema.validate(json.loads(format_report(small_report, "json")), REPORT_SCHEMA)

    def test_low_timer_resolution_doubles_repetitions(self, tiny_model, caplog):
        spec = BenchSpec(prompt_tokens=1, gen_tokens=1, repetitions=2, warmup=0, backend_override="scalar")
        with caplog.at_level(logging.WARNING, logger="ternary_infer.bench"):
            report = run_bench(tiny_model, spec)
        if min(s.prefill_seconds for s in report.entries[0].samples[:2]) < 1e-3:
            assert len(report.entries[0].samples) == 4
            assert "doubling" in caplog.text

    def test_explicit_prompt(self, tiny_model):
        spec = BenchSpec(prompt_tokens=4, gen_tokens=2, repetitions=1, warmup=0)
        report = run_bench(tiny_model, spec, prompt_ids=[1, 2, 3, 4])
        assert report.entries[0].prompt_tokens == 4
        with pytest.raises(ConfigurationError):
            run_bench(tiny_model, spec, prompt_ids=[1, 2])


class TestFormats:
    def test_json_round_trip(self, small_report):
        text = format_report(small_report, "json")
        again = format_report(BenchReport.from_dict(json.loads(text)), "json")
        assert again == text

    def test_text_table(self, small_report):
        text = format_report(small_report, "text")
        header = text.splitlines()[1]
        assert header.count("|") == len(small_report.entries)
        for label in ("Memory (MB)", "TTFT (ms)", "Throughput (tok/s)"):
            assert label in text

    def test_csv_rows(self, small_report):
        rows = list(csv.DictReader(io.StringIO(format_report(small_report, "csv"))))
        assert len(rows) == sum(len(e.samples) for e in small_report.entries)
        assert {"ttft_ms", "tg_tok_s", "peak_rss_bytes"} <= set(rows[0])

    def test_unknown_format(self, small_report):
        with pytest.raises(ConfigurationError):
            format_report(small_report, "xml")

    def test_emit_to_file(self, small_report, tmp_path):
        emit_report(small_report, "json", tmp_path / "r.json")
        assert json.loads((tmp_path / "r.json").read_text())["schema_version"] == 1

    def test_emit_to_stdout(self, small_report, capsys):
        emit_report(small_report, "csv")
        assert capsys.readouterr().out.startswith("model_id,")
