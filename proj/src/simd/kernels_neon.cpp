#include "handrawer/simd/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)
#include <arm_neon.h>

#include <cmath>

namespace handrawer::simd {

namespace {

// 4x4 tile of float64x2 lanes.
void gemm_nn_neon(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
                  double* C, int ldc, bool accumulate) {
    const int n4 = N - N % 4;
    for (int j = 0; j < n4; j += 4) {
        for (int i = 0; i < M; ++i) {
            double* c = C + static_cast<std::size_t>(i) * ldc + j;
            float64x2_t r0 = accumulate ? vld1q_f64(c) : vdupq_n_f64(0.0);
            float64x2_t r1 = accumulate ? vld1q_f64(c + 2) : vdupq_n_f64(0.0);
            const double* a = A + static_cast<std::size_t>(i) * lda;
            const double* b = B + j;
            for (int k = 0; k < K; ++k, b += ldb) {
                const float64x2_t av = vdupq_n_f64(a[k]);
                r0 = vfmaq_f64(r0, av, vld1q_f64(b));
                r1 = vfmaq_f64(r1, av, vld1q_f64(b + 2));
            }
            vst1q_f64(c, r0);
            vst1q_f64(c + 2, r1);
        }
    }
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * lda;
        double* c = C + static_cast<std::size_t>(i) * ldc;
        for (int j = n4; j < N; ++j) {
            double s = accumulate ? c[j] : 0.0;
            for (int k = 0; k < K; ++k) s = std::fma(a[k], B[static_cast<std::size_t>(k) * ldb + j], s);
            c[j] = s;
        }
    }
}

double dot_neon(std::size_t n, const double* x, const double* y) {
    float64x2_t s0 = vdupq_n_f64(0.0);
    float64x2_t s1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 = vfmaq_f64(s0, vld1q_f64(x + i), vld1q_f64(y + i));
        s1 = vfmaq_f64(s1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
    }
    double s = vaddvq_f64(vaddq_f64(s0, s1));
    for (; i < n; ++i) s = std::fma(x[i], y[i], s);
    return s;
}

void gemm_nt_neon(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
                  double* C, int ldc, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * lda;
        double* c = C + static_cast<std::size_t>(i) * ldc;
        for (int j = 0; j < N; ++j) {
            const double r = dot_neon(static_cast<std::size_t>(K), a, B + static_cast<std::size_t>(j) * ldb);
            c[j] = accumulate ? c[j] + r : r;
        }
    }
}

void axpy_neon(std::size_t n, double a, const double* x, double* y) {
    const float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

const KernelTable kNeon{Isa::neon, gemm_nn_neon, gemm_nt_neon, axpy_neon, dot_neon};

}  // namespace

const KernelTable* neon_kernels() { return &kNeon; }

}  // namespace handrawer::simd

#else

namespace handrawer::simd {
const KernelTable* neon_kernels() { return nullptr; }
}  // namespace handrawer::simd

#endif
