#include <vector>

#include "doctest.h"
#include "handrawer/simd/kernels.hpp"
#include "test_support.hpp"

using namespace handrawer;

namespace {

std::vector<const simd::KernelTable*> variants() {
    std::vector<const simd::KernelTable*> out;
    if (auto* t = simd::avx2_kernels()) out.push_back(t);
    if (auto* t = simd::neon_kernels()) out.push_back(t);
    return out;
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    CounterRng rng(seed, {1});
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform() * 2.0 - 1.0;
    return v;
}

}  // namespace

TEST_CASE("runtime selection names a known variant") {
    const auto name = simd::isa_name(simd::kernels().isa);
    CHECK((name == "scalar" || name == "avx2" || name == "neon"));
    MESSAGE("active kernels: " << name);
}

TEST_CASE("vector variants agree with the scalar reference on gemm") {
    const auto& ref = simd::scalar_kernels();
    for (const auto* var : variants()) {
        for (int trial = 0; trial < 60; ++trial) {
            CounterRng rng(42, {static_cast<std::uint64_t>(trial)});
            const int M = 1 + static_cast<int>(rng.below(23));
            const int N = 1 + static_cast<int>(rng.below(37));
            const int K = 1 + static_cast<int>(rng.below(41));
            const bool acc = trial % 2 == 1;
            auto A = random_vec(static_cast<std::size_t>(M) * K, 3 * trial);
            auto B = random_vec(static_cast<std::size_t>(K) * N, 3 * trial + 1);
            auto C0 = random_vec(static_cast<std::size_t>(M) * N, 3 * trial + 2);
            for (auto ta : {simd::Trans::no, simd::Trans::yes}) {
                for (auto tb : {simd::Trans::no, simd::Trans::yes}) {
                    auto c_ref = C0;
                    auto c_var = C0;
                    simd::gemm(ta, tb, M, N, K, A.data(), B.data(), c_ref.data(), acc, ref);
                    simd::gemm(ta, tb, M, N, K, A.data(), B.data(), c_var.data(), acc, *var);
                    for (std::size_t i = 0; i < c_ref.size(); ++i) {
                        REQUIRE(std::abs(c_ref[i] - c_var[i]) <= 1e-12 * (1.0 + std::abs(c_ref[i])));
                    }
                }
            }
        }
    }
}

TEST_CASE("vector variants agree with the scalar reference on dot and axpy") {
    const auto& ref = simd::scalar_kernels();
    for (const auto* var : variants()) {
        for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 64u, 1001u}) {
            auto x = random_vec(n, n);
            auto y = random_vec(n, n + 100);
            CHECK(std::abs(ref.dot(n, x.data(), y.data()) - var->dot(n, x.data(), y.data())) <= 1e-12 * (1.0 + n));
            auto y_ref = y;
            auto y_var = y;
            ref.axpy(n, 0.37, x.data(), y_ref.data());
            var->axpy(n, 0.37, x.data(), y_var.data());
            for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y_ref[i] - y_var[i]) <= 1e-15);
        }
    }
}

TEST_CASE("gemm with K = 0 clears or keeps the output") {
    std::vector<double> c{1.0, 2.0};
    simd::gemm(simd::Trans::no, simd::Trans::no, 1, 2, 0, nullptr, nullptr, c.data(), true);
    CHECK(c[0] == 1.0);
    simd::gemm(simd::Trans::no, simd::Trans::no, 1, 2, 0, nullptr, nullptr, c.data(), false);
    CHECK(c[0] == 0.0);
}

TEST_CASE("gemm matches a triple loop oracle") {
    const int M = 5, N = 6, K = 7;
    auto A = random_vec(M * K, 9);
    auto B = random_vec(K * N, 10);
    std::vector<double> C(M * N);
    simd::gemm(simd::Trans::no, simd::Trans::no, M, N, K, A.data(), B.data(), C.data(), false);
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
            CHECK(std::abs(C[i * N + j] - s) < 1e-13);
        }
    }
}
