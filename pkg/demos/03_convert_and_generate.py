"""
From a float checkpoint to generated text
=========================================

Write a small random float checkpoint, convert it to the ternary container,
load it back and decode a few tokens in both inference modes.
"""

import tempfile
from pathlib import Path

from ternary_infer.convert import convert_file, load_converted, random_checkpoint, save_checkpoint
from ternary_infer.model import FLOAT_REFERENCE, GenerationParams, max_logit_difference
from ternary_infer.tokenizer import detokenize, tokenize

tmp = Path(tempfile.mkdtemp())

# %%
# The default architecture: 4 layers, dim 128, byte vocabulary of 258.
ckpt = random_checkpoint(seed=7)
save_checkpoint(ckpt, tmp / "desk.tf32")
print(ckpt.config)

# %%
report = convert_file(tmp / "desk.tf32", tmp / "desk.trnq", alignment=64)
print(report.summary())
print("file on disk:", (tmp / "desk.trnq").stat().st_size, "bytes")

# %%
model = load_converted(tmp / "desk.trnq")
print("model id", model.model_id, "backend", model.plan.backend.id)

prompt = tokenize("Hello")
out = model.generate(prompt, GenerationParams(max_new_tokens=24))
# random weights, so expect noise
print(repr(detokenize(out)))

# %%
# Same weights, float arithmetic everywhere.
ref = model.with_options(mode=FLOAT_REFERENCE)
print(repr(detokenize(ref.generate(prompt, GenerationParams(max_new_tokens=24)))))

print("largest logit gap between modes:", max_logit_difference(model, tokenize("sixteen tokens..")))

# %%
# Seeded sampling is reproducible.
p = GenerationParams(max_new_tokens=16, strategy="temperature_sampling", temperature=0.8, seed=3)
print(model.generate(prompt, p) == model.generate(prompt, p))
