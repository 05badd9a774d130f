#include <cstdlib>
#include <string>
#include <vector>

#include "handrawer/simd/kernels.hpp"

namespace handrawer::simd {

namespace {

const KernelTable& select() {
    const char* env = std::getenv("HANDRAWER_SIMD");
    const std::string want = env ? env : "auto";
    if (want == "scalar") return scalar_kernels();
    if (want == "avx2" && avx2_kernels()) return *avx2_kernels();
    if (want == "neon" && neon_kernels()) return *neon_kernels();
    if (const KernelTable* t = avx2_kernels()) return *t;
    if (const KernelTable* t = neon_kernels()) return *t;
    return scalar_kernels();
}

void transpose(int rows, int cols, const double* src, double* dst) {
    constexpr int kBlock = 32;
    for (int r0 = 0; r0 < rows; r0 += kBlock) {
        for (int c0 = 0; c0 < cols; c0 += kBlock) {
            const int r1 = std::min(rows, r0 + kBlock);
            const int c1 = std::min(cols, c0 + kBlock);
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
                }
            }
        }
    }
}

}  // namespace

const KernelTable& kernels() {
    static const KernelTable& active = select();
    return active;
}

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

void gemm(Trans ta, Trans tb, int M, int N, int K, const double* A, const double* B, double* C,
          bool accumulate, const KernelTable& table) {
    if (M == 0 || N == 0) return;
    if (K == 0) {
        if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, 0.0);
        return;
    }
    std::vector<double> packed;
    const double* a = A;
    if (ta == Trans::yes) {
        // A is stored K x M.
        packed.resize(static_cast<std::size_t>(M) * K);
        transpose(K, M, A, packed.data());
        a = packed.data();
    }
    if (tb == Trans::yes) {
        // B is stored N x K.
        table.gemm_nt(M, N, K, a, K, B, K, C, N, accumulate);
    } else {
        table.gemm_nn(M, N, K, a, K, B, N, C, N, accumulate);
    }
}

}  // namespace handrawer::simd
