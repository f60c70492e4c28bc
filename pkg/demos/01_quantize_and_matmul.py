"""
Ternary weights and int8 activations
====================================

One linear layer end to end: ternarize a float weight matrix, quantize a
batch of activations row by row, multiply in integers and rescale.
"""

import numpy as np

from ternary_infer import (
    quantize_rows,
    reference_float_linear,
    reference_ternary_matmul,
    ternarize_tensor,
)
from ternary_infer.core import dequantize_output, pipeline_error_bound

rng = np.random.default_rng(0)

# %%
# A float layer with 100 inputs and 6 outputs. The absmean scale becomes
# the tensor scale; every weight is then rounded to -1, 0 or +1.
w_float = rng.normal(0, 0.1, size=(100, 6))
w = ternarize_tensor(w_float, alignment=64)
print("logical shape", w.shape, "stored as", w.codes.shape, "int8")
print("tensor scale", round(w.tensor_scale, 5))
print("column sums", w.col_sums)

# zero padding up to the next 64-byte boundary
print("padding is zero:", not w.codes[:, w.rows_logical:].any())

# %%
# Activations: each row is scaled so its largest magnitude lands on 127.
x = rng.normal(size=(3, 100)).astype(np.float32)
xq = quantize_rows(x, pad_to=w.rows_padded)
print("row scales", xq.scales)
print("first codes", xq.codes[0, :8])

# the worked example from the docs
print(quantize_rows([[2.0, -1.0, 0.5]]).codes)     # [[127 -64  32]]

# %%
# Integer accumulation (adds where w=+1, subtracts where w=-1), then rescale.
acc = reference_ternary_matmul(xq, w)
y = dequantize_output(acc, xq.scales, w.tensor_scale)

# %%
# Compare with plain float math on the same (ternarized) weights.
exact = reference_float_linear(x.astype(np.float64), w.dense(np.float64))
bound = pipeline_error_bound(xq, w)
print("max deviation", np.abs(y - exact).max())
print("analytic bound", bound.max())
print("within bound:", bool(np.all(np.abs(y - exact) <= bound * (1 + 1e-6))))
