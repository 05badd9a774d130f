#include "handrawer/core/rng.hpp"

#include <cmath>
#include <numbers>

namespace handrawer {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t k = splitmix64(seed);
    for (std::uint64_t p : parts) k = splitmix64(k ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
    return k;
}

std::uint64_t CounterRng::next_u64() { return splitmix64(key_ + 0xD1B54A32D192ED03ULL * ++counter_); }

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double CounterRng::normal() {
    // Box-Muller on one pair per draw; the cosine branch only, for a fixed
    // two-words-per-normal cadence.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
    if (n == 0) return 0;
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
}

void CounterRng::fill_normal(std::span<double> out, double stddev) {
    for (double& v : out) v = stddev * normal();
}

}  // namespace handrawer
