// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "handrawer/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#include <cmath>

namespace handrawer::simd {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// 4x8 register tile; the B panel (K x 8) stays hot in L1 while i sweeps.
void gemm_nn_avx2(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
                  double* C, int ldc, bool accumulate) {
    const int n8 = N - N % 8;
    const int m4 = M - M % 4;
    for (int j = 0; j < n8; j += 8) {
        int i = 0;
        for (; i < m4; i += 4) {
            double* c0 = C + static_cast<std::size_t>(i) * ldc + j;
            double* c1 = c0 + ldc;
            double* c2 = c1 + ldc;
            double* c3 = c2 + ldc;
            __m256d r00, r01, r10, r11, r20, r21, r30, r31;
            if (accumulate) {
                r00 = _mm256_loadu_pd(c0); r01 = _mm256_loadu_pd(c0 + 4);
                r10 = _mm256_loadu_pd(c1); r11 = _mm256_loadu_pd(c1 + 4);
                r20 = _mm256_loadu_pd(c2); r21 = _mm256_loadu_pd(c2 + 4);
                r30 = _mm256_loadu_pd(c3); r31 = _mm256_loadu_pd(c3 + 4);
            } else {
                r00 = r01 = r10 = r11 = r20 = r21 = r30 = r31 = _mm256_setzero_pd();
            }
            const double* a0 = A + static_cast<std::size_t>(i) * lda;
            const double* a1 = a0 + lda;
            const double* a2 = a1 + lda;
            const double* a3 = a2 + lda;
            const double* b = B + j;
            for (int k = 0; k < K; ++k, b += ldb) {
                const __m256d b0 = _mm256_loadu_pd(b);
                const __m256d b1 = _mm256_loadu_pd(b + 4);
                __m256d a = _mm256_broadcast_sd(a0 + k);
                r00 = _mm256_fmadd_pd(a, b0, r00); r01 = _mm256_fmadd_pd(a, b1, r01);
                a = _mm256_broadcast_sd(a1 + k);
                r10 = _mm256_fmadd_pd(a, b0, r10); r11 = _mm256_fmadd_pd(a, b1, r11);
                a = _mm256_broadcast_sd(a2 + k);
                r20 = _mm256_fmadd_pd(a, b0, r20); r21 = _mm256_fmadd_pd(a, b1, r21);
                a = _mm256_broadcast_sd(a3 + k);
                r30 = _mm256_fmadd_pd(a, b0, r30); r31 = _mm256_fmadd_pd(a, b1, r31);
            }
            _mm256_storeu_pd(c0, r00); _mm256_storeu_pd(c0 + 4, r01);
            _mm256_storeu_pd(c1, r10); _mm256_storeu_pd(c1 + 4, r11);
            _mm256_storeu_pd(c2, r20); _mm256_storeu_pd(c2 + 4, r21);
            _mm256_storeu_pd(c3, r30); _mm256_storeu_pd(c3 + 4, r31);
        }
        for (; i < M; ++i) {
            double* c = C + static_cast<std::size_t>(i) * ldc + j;
            __m256d r0 = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
            __m256d r1 = accumulate ? _mm256_loadu_pd(c + 4) : _mm256_setzero_pd();
            const double* a = A + static_cast<std::size_t>(i) * lda;
            const double* b = B + j;
            for (int k = 0; k < K; ++k, b += ldb) {
                const __m256d av = _mm256_broadcast_sd(a + k);
                r0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b), r0);
                r1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 4), r1);
            }
            _mm256_storeu_pd(c, r0);
            _mm256_storeu_pd(c + 4, r1);
        }
    }
    if (n8 == N) return;
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * lda;
        double* c = C + static_cast<std::size_t>(i) * ldc;
        for (int j = n8; j < N; ++j) {
            double s = accumulate ? c[j] : 0.0;
            for (int k = 0; k < K; ++k) s = std::fma(a[k], B[static_cast<std::size_t>(k) * ldb + j], s);
            c[j] = s;
        }
    }
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
    __m256d s0 = _mm256_setzero_pd();
    __m256d s1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
    }
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s = std::fma(x[i], y[i], s);
    return s;
}

void gemm_nt_avx2(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
                  double* C, int ldc, bool accumulate) {
    const int k4 = K - K % 4;
    const int n4 = N - N % 4;
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * lda;
        double* c = C + static_cast<std::size_t>(i) * ldc;
        int j = 0;
        for (; j < n4; j += 4) {
            const double* b0 = B + static_cast<std::size_t>(j) * ldb;
            const double* b1 = b0 + ldb;
            const double* b2 = b1 + ldb;
            const double* b3 = b2 + ldb;
            __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
            for (int k = 0; k < k4; k += 4) {
                const __m256d av = _mm256_loadu_pd(a + k);
                s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + k), s0);
                s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + k), s1);
                s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + k), s2);
                s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + k), s3);
            }
            double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
            for (int k = k4; k < K; ++k) {
                r0 = std::fma(a[k], b0[k], r0);
                r1 = std::fma(a[k], b1[k], r1);
                r2 = std::fma(a[k], b2[k], r2);
                r3 = std::fma(a[k], b3[k], r3);
            }
            if (accumulate) {
                c[j] += r0; c[j + 1] += r1; c[j + 2] += r2; c[j + 3] += r3;
            } else {
                c[j] = r0; c[j + 1] = r1; c[j + 2] = r2; c[j + 3] = r3;
            }
        }
        for (; j < N; ++j) {
            const double r = dot_avx2(static_cast<std::size_t>(K), a, B + static_cast<std::size_t>(j) * ldb);
            c[j] = accumulate ? c[j] + r : r;
        }
    }
}

void axpy_avx2(std::size_t n, double a, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

const KernelTable kAvx2{Isa::avx2, gemm_nn_avx2, gemm_nt_avx2, axpy_avx2, dot_avx2};

}  // namespace

const KernelTable* avx2_kernels() {
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &kAvx2 : nullptr;
}

}  // namespace handrawer::simd

#else

namespace handrawer::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace handrawer::simd

#endif
