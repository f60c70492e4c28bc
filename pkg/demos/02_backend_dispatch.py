"""
CPU detection and SIMD kernels
==============================

Which dot-product instructions does this machine have, and do the vector
kernels agree with the scalar one?
"""

import time

import numpy as np

from ternary_infer.core import quantize_rows, reference_ternary_matmul, ternarize_tensor
from ternary_infer.kernels import (
    PORTABLE_SCALAR,
    KernelPlan,
    available_backends,
    cpu_features,
    detect_backend,
    kernel_matmul,
    kernel_matmul_raw,
)

print("cpu features:", cpu_features())
for b in available_backends():
    print(f"  {b.id:16s} vector {b.vector_bytes:2d} B  alignment {b.alignment_bytes:2d} B  "
          f"activation offset {b.activation_offset}")
print("selected:", detect_backend().id)
# LITESPARK_FORCE_BACKEND=scalar python demos/02_backend_dispatch.py forces the fallback

# %%
# Awkward shapes on purpose: nothing here is a multiple of a vector width.
rng = np.random.default_rng(1)
w = ternarize_tensor(rng.normal(size=(17, 33)), alignment=64)
xq = quantize_rows(rng.normal(size=(3, 17)), pad_to=w.rows_padded)
ref = reference_ternary_matmul(xq, w)
for b in available_backends():
    for threads in (1, 4):
        same = np.array_equal(kernel_matmul(KernelPlan(b, threads), xq, w), ref)
        print(f"{b.id:16s} threads={threads}: identical to reference = {same}")

# %%
# On x86 the instruction multiplies unsigned by signed bytes. The kernel
# shifts activations by +128 and takes 128 * col_sum back out afterwards.
best = detect_backend()
if best.activation_offset:
    raw = kernel_matmul_raw(KernelPlan(best), xq, w)
    print("raw accumulator", raw[0, :4])
    print("minus 128*col_sum", (raw - 128 * w.col_sums)[0, :4])
    print("reference       ", ref[0, :4])

# %%
# A 2048 x 2048 GEMV, one row.
w = ternarize_tensor(rng.normal(size=(2048, 2048)), alignment=64)
xq = quantize_rows(rng.normal(size=(1, 2048)), pad_to=w.rows_padded)


def per_call(plan, reps=30):
    kernel_matmul(plan, xq, w)
    t0 = time.perf_counter()
    for _ in range(reps):
        kernel_matmul(plan, xq, w)
    return (time.perf_counter() - t0) / reps


base = per_call(KernelPlan(PORTABLE_SCALAR))
for b in available_backends():
    t = per_call(KernelPlan(b))
    print(f"{b.id:16s} {t * 1e3:7.3f} ms  ({base / t:.1f}x portable)")
