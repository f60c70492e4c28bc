/*
 * int8 dot-product kernels for ternary weights.
 *
 * Layout contract (checked on the Python side):
 *   x   : m rows of kp activation bytes, base aligned to the vector width
 *   w   : n output-major weight vectors of kp int8 codes, base aligned
 *   out : m x n int32, row-major; a call fills columns [n0, n1) only
 * kp is a multiple of the backend's vector width, so there is no tail loop.
 *
 * x86 kernels take activations biased by +128 (uint8), as VPDPBUSD multiplies
 * unsigned by signed bytes; the caller subtracts 128 * col_sum afterwards.
 */
#include <stdint.h>

#define TK_AVX512_VNNI 1
#define TK_AVX_VNNI 2
#define TK_NEON_SDOT 4

#if defined(__x86_64__) || defined(_M_X64)
#include <cpuid.h>
#include <immintrin.h>

static uint64_t tk_xgetbv0(void)
{
    uint32_t lo, hi;
    __asm__ volatile("xgetbv" : "=a"(lo), "=d"(hi) : "c"(0));
    return ((uint64_t)hi << 32) | lo;
}

int tk_cpu_features(void)
{
    unsigned a, b, c, d;
    int feats = 0;
    if (!__get_cpuid(1, &a, &b, &c, &d))
        return 0;
    int osxsave = (c >> 27) & 1;
    if (!osxsave)
        return 0;
    uint64_t xcr0 = tk_xgetbv0();
    int ymm_ok = (xcr0 & 0x6) == 0x6;
    int zmm_ok = (xcr0 & 0xe6) == 0xe6;
    if (!__get_cpuid_count(7, 0, &a, &b, &c, &d))
        return 0;
    int avx2 = (b >> 5) & 1;
    int avx512f = (b >> 16) & 1;
    int avx512bw = (b >> 30) & 1;
    int avx512vnni = (c >> 11) & 1;
    if (zmm_ok && avx512f && avx512bw && avx512vnni)
        feats |= TK_AVX512_VNNI;
    if (__get_cpuid_count(7, 1, &a, &b, &c, &d)) {
        int avxvnni = (a >> 4) & 1;
        if (ymm_ok && avx2 && avxvnni)
            feats |= TK_AVX_VNNI;
    }
    return feats;
}

int tk_compiled_backends(void) { return TK_AVX512_VNNI | TK_AVX_VNNI; }

__attribute__((target("avx512f,avx512bw,avx512vnni")))
void tk_matmul_avx512_vnni(const uint8_t *x, const int8_t *w, int32_t *out,
                           int64_t m, int64_t kp, int64_t n, int64_t n0, int64_t n1)
{
    int64_t j = n0;
    for (; j + 4 <= n1; j += 4) {
        const int8_t *w0 = w + j * kp, *w1 = w0 + kp, *w2 = w1 + kp, *w3 = w2 + kp;
        for (int64_t i = 0; i < m; ++i) {
            const uint8_t *xr = x + i * kp;
            __m512i a0 = _mm512_setzero_si512(), a1 = _mm512_setzero_si512();
            __m512i a2 = _mm512_setzero_si512(), a3 = _mm512_setzero_si512();
            for (int64_t k = 0; k < kp; k += 64) {
                __m512i xv = _mm512_load_si512((const void *)(xr + k));
                a0 = _mm512_dpbusd_epi32(a0, xv, _mm512_load_si512((const void *)(w0 + k)));
                a1 = _mm512_dpbusd_epi32(a1, xv, _mm512_load_si512((const void *)(w1 + k)));
                a2 = _mm512_dpbusd_epi32(a2, xv, _mm512_load_si512((const void *)(w2 + k)));
                a3 = _mm512_dpbusd_epi32(a3, xv, _mm512_load_si512((const void *)(w3 + k)));
            }
            int32_t *o = out + i * n + j;
            o[0] = _mm512_reduce_add_epi32(a0);
            o[1] = _mm512_reduce_add_epi32(a1);
            o[2] = _mm512_reduce_add_epi32(a2);
            o[3] = _mm512_reduce_add_epi32(a3);
        }
    }
    for (; j < n1; ++j) {
        const int8_t *wj = w + j * kp;
        for (int64_t i = 0; i < m; ++i) {
            const uint8_t *xr = x + i * kp;
            __m512i acc = _mm512_setzero_si512();
            for (int64_t k = 0; k < kp; k += 64)
                acc = _mm512_dpbusd_epi32(acc, _mm512_load_si512((const void *)(xr + k)),
                                          _mm512_load_si512((const void *)(wj + k)));
            out[i * n + j] = _mm512_reduce_add_epi32(acc);
        }
    }
}

__attribute__((target("avx2,avxvnni")))
static inline int32_t tk_hsum256(__m256i v)
{
    __m128i s = _mm_add_epi32(_mm256_castsi256_si128(v), _mm256_extracti128_si256(v, 1));
    s = _mm_add_epi32(s, _mm_shuffle_epi32(s, _MM_SHUFFLE(1, 0, 3, 2)));
    s = _mm_add_epi32(s, _mm_shuffle_epi32(s, _MM_SHUFFLE(2, 3, 0, 1)));
    return _mm_cvtsi128_si32(s);
}

__attribute__((target("avx2,avxvnni")))
void tk_matmul_avx_vnni(const uint8_t *x, const int8_t *w, int32_t *out,
                        int64_t m, int64_t kp, int64_t n, int64_t n0, int64_t n1)
{
    int64_t j = n0;
    for (; j + 4 <= n1; j += 4) {
        const int8_t *w0 = w + j * kp, *w1 = w0 + kp, *w2 = w1 + kp, *w3 = w2 + kp;
        for (int64_t i = 0; i < m; ++i) {
            const uint8_t *xr = x + i * kp;
            __m256i a0 = _mm256_setzero_si256(), a1 = _mm256_setzero_si256();
            __m256i a2 = _mm256_setzero_si256(), a3 = _mm256_setzero_si256();
            for (int64_t k = 0; k < kp; k += 32) {
                __m256i xv = _mm256_load_si256((const __m256i *)(xr + k));
                a0 = _mm256_dpbusd_avx_epi32(a0, xv, _mm256_load_si256((const __m256i *)(w0 + k)));
                a1 = _mm256_dpbusd_avx_epi32(a1, xv, _mm256_load_si256((const __m256i *)(w1 + k)));
                a2 = _mm256_dpbusd_avx_epi32(a2, xv, _mm256_load_si256((const __m256i *)(w2 + k)));
                a3 = _mm256_dpbusd_avx_epi32(a3, xv, _mm256_load_si256((const __m256i *)(w3 + k)));
            }
            int32_t *o = out + i * n + j;
            o[0] = tk_hsum256(a0);
            o[1] = tk_hsum256(a1);
            o[2] = tk_hsum256(a2);
            o[3] = tk_hsum256(a3);
        }
    }
    for (; j < n1; ++j) {
        const int8_t *wj = w + j * kp;
        for (int64_t i = 0; i < m; ++i) {
            const uint8_t *xr = x + i * kp;
            __m256i acc = _mm256_setzero_si256();
            for (int64_t k = 0; k < kp; k += 32)
                acc = _mm256_dpbusd_avx_epi32(acc, _mm256_load_si256((const __m256i *)(xr + k)),
                                              _mm256_load_si256((const __m256i *)(wj + k)));
            out[i * n + j] = tk_hsum256(acc);
        }
    }
}

#elif defined(__aarch64__)
#include <arm_neon.h>
#if defined(__linux__)
#include <sys/auxv.h>
#ifndef HWCAP_ASIMDDP
#define HWCAP_ASIMDDP (1 << 20)
#endif
#elif defined(__APPLE__)
#include <sys/sysctl.h>
#endif

int tk_cpu_features(void)
{
#if defined(__linux__)
    return (getauxval(AT_HWCAP) & HWCAP_ASIMDDP) ? TK_NEON_SDOT : 0;
#elif defined(__APPLE__)
    int v = 0;
    size_t len = sizeof(v);
    if (sysctlbyname("hw.optional.arm.FEAT_DotProd", &v, &len, 0, 0) == 0 && v)
        return TK_NEON_SDOT;
    return 0;
#else
    return 0;
#endif
}

int tk_compiled_backends(void) { return TK_NEON_SDOT; }

void tk_matmul_neon_sdot(const int8_t *x, const int8_t *w, int32_t *out,
                         int64_t m, int64_t kp, int64_t n, int64_t n0, int64_t n1)
{
    int64_t j = n0;
    for (; j + 4 <= n1; j += 4) {
        const int8_t *w0 = w + j * kp, *w1 = w0 + kp, *w2 = w1 + kp, *w3 = w2 + kp;
        for (int64_t i = 0; i < m; ++i) {
            const int8_t *xr = x + i * kp;
            int32x4_t a0 = vdupq_n_s32(0), a1 = vdupq_n_s32(0);
            int32x4_t a2 = vdupq_n_s32(0), a3 = vdupq_n_s32(0);
            for (int64_t k = 0; k < kp; k += 16) {
                int8x16_t xv = vld1q_s8(xr + k);
                a0 = vdotq_s32(a0, xv, vld1q_s8(w0 + k));
                a1 = vdotq_s32(a1, xv, vld1q_s8(w1 + k));
                a2 = vdotq_s32(a2, xv, vld1q_s8(w2 + k));
                a3 = vdotq_s32(a3, xv, vld1q_s8(w3 + k));
            }
            int32_t *o = out + i * n + j;
            o[0] = vaddvq_s32(a0);
            o[1] = vaddvq_s32(a1);
            o[2] = vaddvq_s32(a2);
            o[3] = vaddvq_s32(a3);
        }
    }
    for (; j < n1; ++j) {
        const int8_t *wj = w + j * kp;
        for (int64_t i = 0; i < m; ++i) {
            const int8_t *xr = x + i * kp;
            int32x4_t acc = vdupq_n_s32(0);
            for (int64_t k = 0; k < kp; k += 16)
                acc = vdotq_s32(acc, vld1q_s8(xr + k), vld1q_s8(wj + k));
            out[i * n + j] = vaddvq_s32(acc);
        }
    }
}

#else
int tk_cpu_features(void) { return 0; }
int tk_compiled_backends(void) { return 0; }
#endif
