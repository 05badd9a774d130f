#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>

namespace handrawer {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

// Derives a stream key from a seed and any number of labels.
std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> parts);

// Counter-based generator: draw n of stream k is a pure function of (k, n),
// so streams keyed by (seed, step) never shift when other streams change.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(splitmix64(key)) {}
    CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) : CounterRng(derive_key(seed, parts)) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double normal();
    std::uint64_t below(std::uint64_t n);

    void fill_normal(std::span<double> out, double stddev = 1.0);

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace handrawer
