#include "handrawer/simd/kernels.hpp"

namespace handrawer::simd {

namespace {

void gemm_nn_scalar(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
                    double* C, int ldc, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        double* c = C + static_cast<std::size_t>(i) * ldc;
        for (int j = 0; j < N; ++j) {
            double s = accumulate ? c[j] : 0.0;
            for (int k = 0; k < K; ++k) {
                s += A[static_cast<std::size_t>(i) * lda + k] * B[static_cast<std::size_t>(k) * ldb + j];
            }
            c[j] = s;
        }
    }
}

void gemm_nt_scalar(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
                    double* C, int ldc, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * lda;
        double* c = C + static_cast<std::size_t>(i) * ldc;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<std::size_t>(j) * ldb;
            double s = accumulate ? c[j] : 0.0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] = s;
        }
    }
}

void axpy_scalar(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

const KernelTable kScalar{Isa::scalar, gemm_nn_scalar, gemm_nt_scalar, axpy_scalar, dot_scalar};

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

}  // namespace handrawer::simd
