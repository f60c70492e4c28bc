"""
Prefill and decode throughput
=============================

A short pp/tg run on the default random model, printed as a table and as
JSON. ``ternary-infer benchmark --model desk.trnq`` runs the full pp128+tg128.
"""

import json

from ternary_infer.bench import BenchSpec, format_report, run_bench
from ternary_infer.convert import model_from_checkpoint, random_checkpoint

model = model_from_checkpoint(random_checkpoint(seed=7), alignment=64)

spec = BenchSpec(prompt_tokens=64, gen_tokens=32, threads_list=(1, 2), repetitions=3, warmup=1)
report = run_bench(model, spec)

# %%
print(format_report(report, "text"))

# %%
# Per repetition timings live next to the medians.
entry = report.entries[0]
for s in entry.samples:
    print(f"prefill {s.prefill_seconds * 1e3:6.2f} ms   decode {s.decode_seconds * 1e3:7.2f} ms")

# %%
doc = json.loads(format_report(report, "json"))
print(sorted(doc["entries"][0]))
