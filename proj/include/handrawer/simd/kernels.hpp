#pragma once
// Dense float64 inner-loop kernels with a scalar reference and SIMD variants.
//
// gemm_nn accumulates each output in increasing k order in every variant;
// dot and gemm_nt reduce in SIMD lanes, so variants agree to rounding only.
// The active table is picked once at startup from the CPU features;
// HANDRAWER_SIMD (scalar | avx2 | neon | auto) overrides the choice.

#include <cstddef>
#include <string_view>

namespace handrawer::simd {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
    Isa isa;
    // C[M,N] (+)= A[M,K] * B[K,N], all row-major with leading dimensions.
    void (*gemm_nn)(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
                    double* C, int ldc, bool accumulate);
    // C[M,N] (+)= A[M,K] * B[N,K]^T
    void (*gemm_nt)(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
                    double* C, int ldc, bool accumulate);
    // y += a * x
    void (*axpy)(std::size_t n, double a, const double* x, double* y);
    double (*dot)(std::size_t n, const double* x, const double* y);
};

const KernelTable& scalar_kernels();
// nullptr when the variant is not compiled in or the CPU lacks the feature.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Runtime-selected table.
const KernelTable& kernels();

std::string_view isa_name(Isa isa);

enum class Trans { no, yes };

// Row-major GEMM over contiguous operands: op(A) is M x K, op(B) is K x N.
void gemm(Trans ta, Trans tb, int M, int N, int K, const double* A, const double* B, double* C,
          bool accumulate, const KernelTable& table = kernels());

}  // namespace handrawer::simd
