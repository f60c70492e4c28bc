import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ternary_infer.core import (
    FLUSH_THRESHOLD,
    GammaMode,
    QuantizedRowBatch,
    TernarizePolicy,
    TernaryMatrix,
    column_sums,
    dequantize_output,
    padded_length,
    pipeline_error_bound,
    quantize_rows,
    reference_float_linear,
    reference_ternary_matmul,
    round_half_away,
    ternarize_tensor,
)
from ternary_infer.errors import ConversionError, QuantizationError, ShapeError

FIXED_ONE = TernarizePolicy(GammaMode.FIXED_ONE)


def sum_of_products(x_codes, w_codes):
    """Independent oracle: literal triple loop over int8 codes (K x N weights)."""
    m, k = x_codes.shape
    n = w_codes.shape[1]
    out = np.zeros((m, n), dtype=np.int64)
    for i in range(m):
        for j in range(n):
            out[i, j] = sum(int(x_codes[i, t]) * int(w_codes[t, j]) for t in range(k))
    return out


def matrix_from_codes(codes_kn, alignment=16):
    """TernaryMatrix straight from a K x N code array (fixed-one policy keeps codes as-is)."""
    return ternarize_tensor(np.asarray(codes_kn, dtype=np.float64), FIXED_ONE, alignment)


finite_rows = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 40)),
    elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
)

# Magnitudes far from the subnormal range, so scaling by 2**+-20 is exact.
normal_rows = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 40)),
    elements=st.one_of(
        st.just(0.0),
        st.floats(1e-200, 1e6).flatmap(lambda v: st.sampled_from([v, -v])),
    ),
)


class TestRounding:
    def test_ties_go_away_from_zero(self):
        v = np.array([0.5, -0.5, 1.5, -1.5, 2.5, -2.5, 0.49999999999999994])
        assert round_half_away(v).tolist() == [1, -1, 2, -2, 3, -3, 0]

    @pytest.mark.parametrize("k,align,expected", [(100, 64, 128), (64, 64, 64), (1, 16, 16), (17, 32, 32)])
    def test_padded_length(self, k, align, expected):
        assert padded_length(k, align) == expected


class TestQuantizeRows:
    def test_worked_example(self):
        # 2*127/2 = 127, -1*127/2 = -63.5 -> -64, 0.5*127/2 = 31.75 -> 32
        xq = quantize_rows(np.array([[2.0, -1.0, 0.5]]), pad_to=3)
        assert xq.codes.tolist() == [[127, -64, 32]]
        assert xq.scales[0] == pytest.approx(2.0 / 127, rel=0, abs=0)

    def test_zero_row(self):
        xq = quantize_rows(np.zeros((1, 3)), pad_to=3)
        assert xq.codes.tolist() == [[0, 0, 0]]
        assert xq.scales[0] == 0

    def test_padding_is_zero(self, rng):
        xq = quantize_rows(rng.normal(size=(4, 10)), pad_to=64)
        assert xq.codes.shape == (4, 64)
        assert not xq.codes[:, 10:].any()

    def test_rejects_non_finite(self):
        with pytest.raises(QuantizationError):
            quantize_rows(np.array([[1.0, np.nan]]))
        with pytest.raises(QuantizationError):
            quantize_rows(np.array([[np.inf, 1.0]]))

    def test_rejects_short_padding(self):
        with pytest.raises(ShapeError):
            quantize_rows(np.ones((1, 8)), pad_to=4)

    @given(finite_rows)
    def test_max_element_maps_to_127(self, x):
        xq = quantize_rows(x)
        for i in range(x.shape[0]):
            if np.abs(x[i]).max() >= FLUSH_THRESHOLD:
                j = np.argmax(np.abs(x[i]))
                assert abs(int(xq.codes[i, j])) == 127

    @given(finite_rows)
    def test_code_range_and_scale_sign(self, x):
        xq = quantize_rows(x)
        assert xq.codes.min() >= -127 and xq.codes.max() <= 127
        assert np.all(xq.scales >= 0)
        assert np.array_equal(xq.scales == 0, np.abs(x).max(axis=1) < FLUSH_THRESHOLD)

    @given(finite_rows)
    def test_round_trip_bound(self, x):
        xq = quantize_rows(x)
        k = x.shape[1]
        recon = xq.scales[:, None] * xq.codes[:, :k]
        slack = 2 * np.spacing(np.abs(x) + xq.scales[:, None])
        flushed = (xq.scales == 0)[:, None]
        assert np.all(np.abs(recon - x) <= np.where(flushed, FLUSH_THRESHOLD, xq.scales[:, None] / 2 + slack))

    @pytest.mark.parametrize("v", [5e-324, 1e-310, 2e-306])
    def test_tiny_rows_flush_to_zero(self, v):
        xq = quantize_rows(np.array([[v, -v / 2]]))
        assert xq.scales[0] == 0 and not xq.codes.any()

    def test_smallest_kept_row(self):
        xq = quantize_rows(np.array([[FLUSH_THRESHOLD, 0.0]]))
        assert xq.scales[0] > 0 and xq.codes[0, 0] == 127

    @given(normal_rows, st.integers(-20, 20))
    def test_power_of_two_scaling_keeps_codes(self, x, n):
        a = quantize_rows(x)
        b = quantize_rows(x * 2.0 ** n)
        assert np.array_equal(a.codes, b.codes)
        assert np.array_equal(b.scales, a.scales * 2.0 ** n)


class TestDequantize:
    def test_direct_product(self):
        assert dequantize_output(np.array([[8]], np.int32), [0.5], 1.0)[0, 0] == 4.0

    def test_zero_scale_row(self):
        y = dequantize_output(np.array([[5, -3], [1, 2]], np.int32), [0.0, 1.0], 0.7)
        assert not y[0].any()


class TestTernarize:
    def test_fixed_one_column(self):
        w = ternarize_tensor(np.array([[1.0], [-1.0], [1.0], [0.0]]), FIXED_ONE, 16)
        assert w.codes[0, :4].tolist() == [1, -1, 1, 0]
        assert w.col_sums.tolist() == [1]
        assert w.tensor_scale == 1.0

    def test_absmean_example(self):
        # gamma = (0.8 + 0.3 + 0.05 + 0.9) / 4 = 0.5125
        # w/gamma = 1.561, -0.585, 0.098, -1.756 -> clamp(round) = +1, -1, 0, -1
        w = ternarize_tensor(np.array([[0.8], [-0.3], [0.05], [-0.9]]), TernarizePolicy(), 16)
        assert w.tensor_scale == pytest.approx(0.5125, rel=1e-7)
        assert w.codes[0, :4].tolist() == [1, -1, 0, -1]

    def test_all_zero(self):
        w = ternarize_tensor(np.zeros((5, 3)), TernarizePolicy(), 16)
        assert not w.codes.any()
        assert w.col_sums.tolist() == [0, 0, 0]
        assert w.tensor_scale == 1.0

    def test_fixed_one_scale(self, rng):
        assert ternarize_tensor(rng.normal(size=(8, 8)), FIXED_ONE).tensor_scale == 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(ConversionError):
            ternarize_tensor(np.array([[np.nan, 1.0]]))

    def test_rejects_bad_alignment(self):
        with pytest.raises(ConversionError):
            ternarize_tensor(np.ones((4, 4)), alignment=48)

    @pytest.mark.parametrize("alignment", [16, 32, 64])
    def test_layout_invariants(self, rng, alignment):
        w = ternarize_tensor(rng.normal(size=(100, 7)), alignment=alignment)
        assert w.rows_padded == padded_length(100, alignment)
        assert w.codes.shape == (7, w.rows_padded)
        assert w.codes.ctypes.data % 64 == 0
        w.validate()

    def test_storage_is_transposed(self, rng):
        src = rng.normal(size=(9, 4))
        w = ternarize_tensor(src, alignment=16)
        expect = np.clip(round_half_away(src / np.abs(src).mean()), -1, 1)
        assert np.array_equal(w.codes[:, :9], expect.T)
        assert np.array_equal(w.ternary_codes(), expect)

    def test_matrix_is_read_only(self, rng):
        w = ternarize_tensor(rng.normal(size=(4, 4)))
        with pytest.raises(ValueError):
            w.codes[0, 0] = 1

    @pytest.mark.parametrize("alignment", [16, 32, 64])
    def test_vector_offsets_aligned(self, rng, alignment):
        w = ternarize_tensor(rng.normal(size=(37, 5)), alignment=alignment)
        base = w.codes.ctypes.data
        for j in range(w.cols):
            assert (w.codes[j].ctypes.data - base) % alignment == 0
            assert w.codes[j].ctypes.data % alignment == 0


class TestColumnSums:
    @pytest.mark.parametrize("col,expected", [([1, -1, 1, 0], 1), ([0, 0, 0, 0], 0), ([1, 1, 1, 1], 4)])
    def test_examples(self, col, expected):
        w = matrix_from_codes(np.array(col)[:, None])
        assert column_sums(w).tolist() == [expected]

    @given(arrays(np.int8, st.tuples(st.integers(1, 70), st.integers(1, 12)), elements=st.integers(-1, 1)))
    def test_recomputation_matches_stored(self, codes):
        w = matrix_from_codes(codes)
        assert np.array_equal(column_sums(w), w.col_sums)
        assert np.array_equal(w.col_sums, codes.sum(axis=0))


class TestReferenceMatmul:
    def test_hand_example(self):
        w = matrix_from_codes(np.array([[1], [-1], [0]]))
        codes = np.zeros((1, w.rows_padded), np.int8)
        codes[0, :3] = [3, -5, 7]
        xq = QuantizedRowBatch(1, 3, codes, np.ones(1))
        assert reference_ternary_matmul(xq, w).tolist() == [[8]]

    def test_zero_weights(self, rng):
        w = matrix_from_codes(np.zeros((10, 6)))
        xq = quantize_rows(rng.normal(size=(3, 10)), pad_to=w.rows_padded)
        assert not reference_ternary_matmul(xq, w).any()

    def test_matches_brute_force(self, rng):
        codes = rng.integers(-1, 2, size=(13, 5))
        w = matrix_from_codes(codes)
        xq = quantize_rows(rng.normal(size=(4, 13)), pad_to=w.rows_padded)
        expect = sum_of_products(xq.codes[:, :13], codes)
        assert np.array_equal(reference_ternary_matmul(xq, w), expect)

    def test_eq3_equals_eq2_exhaustive_small(self, rng):
        for k in range(1, 6):
            cols = np.array(list(itertools.product((-1, 0, 1), repeat=k))).T  # k x 3^k
            w = matrix_from_codes(cols)
            xq = quantize_rows(rng.normal(size=(5, k)), pad_to=w.rows_padded)
            expect = xq.codes[:, :k].astype(np.int64) @ cols
            assert np.array_equal(reference_ternary_matmul(xq, w), expect)

    def test_shape_mismatch(self, rng):
        w = matrix_from_codes(np.ones((8, 2)), alignment=16)
        xq = quantize_rows(rng.normal(size=(1, 8)), pad_to=32)
        with pytest.raises(ShapeError):
            reference_ternary_matmul(xq, w)

    def test_padding_invisible(self, rng):
        codes = rng.integers(-1, 2, size=(20, 9))
        w16, w64 = matrix_from_codes(codes, 16), matrix_from_codes(codes, 64)
        x = rng.normal(size=(3, 20))
        a = reference_ternary_matmul(quantize_rows(x, w16.rows_padded), w16)
        b = reference_ternary_matmul(quantize_rows(x, w64.rows_padded), w64)
        assert np.array_equal(a, b)

    def test_deterministic(self, rng):
        w = ternarize_tensor(rng.normal(size=(300, 40)))
        xq = quantize_rows(rng.normal(size=(6, 300)), w.rows_padded)
        assert np.array_equal(reference_ternary_matmul(xq, w), reference_ternary_matmul(xq, w))


class TestFloatLinear:
    def test_identity(self, rng):
        w = rng.normal(size=(2, 5))
        assert np.array_equal(reference_float_linear(np.eye(2), w), w)

    def test_scalar(self):
        assert reference_float_linear(np.array([[2.0]]), np.array([[3.0]])).tolist() == [[6.0]]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reference_float_linear(np.ones((2, 3)), np.ones((2, 3)))

    def test_quantized_pipeline_within_bound(self, rng):
        x = rng.normal(size=(8, 16))
        w = ternarize_tensor(rng.normal(size=(16, 4)), alignment=16)
        xq = quantize_rows(x, w.rows_padded)
        y = dequantize_output(reference_ternary_matmul(xq, w), xq.scales, w.tensor_scale)
        oracle = reference_float_linear(x, w.dense(np.float64))
        assert np.all(np.abs(y - oracle) <= pipeline_error_bound(xq, w) * (1 + 1e-4))


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 8), st.integers(1, 200), st.integers(1, 40), st.integers(0, 2**32 - 1),
)
def test_pipeline_error_bound_property(m, k, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(m, k)) * rng.uniform(0.01, 100)
    w = ternarize_tensor(rng.normal(size=(k, n)), alignment=16)
    xq = quantize_rows(x, w.rows_padded)
    y = dequantize_output(reference_ternary_matmul(xq, w), xq.scales, w.tensor_scale)
    oracle = reference_float_linear(x, w.dense(np.float64))
    assert np.all(np.abs(y - oracle) <= pipeline_error_bound(xq, w) * (1 + 1e-4))


def test_ternary_matrix_rejects_bad_codes_shape():
    with pytest.raises(ShapeError):
        TernaryMatrix(4, 2, 16, np.zeros((2, 8), np.int8), np.zeros(2, np.int32), 1.0)


def test_validate_detects_corruption(rng):
    w = ternarize_tensor(rng.normal(size=(10, 3)), alignment=16)
    codes = w.codes.copy()
    codes[0, 12] = 1  # inside padding
    bad = TernaryMatrix(10, 3, 16, codes, w.col_sums, w.tensor_scale)
    with pytest.raises(ShapeError):
        bad.validate()


def test_repad_roundtrip(rng):
    w = ternarize_tensor(rng.normal(size=(100, 6)), alignment=16)
    w64 = w.repad(64)
    assert w64.rows_padded == 128
    w64.validate()
    assert np.array_equal(w64.codes[:, :100], w.codes[:, :100])
    assert w64.repad(16).rows_padded == 112
