#include "handrawer/diffusion/text.hpp"

#include <cctype>
#include <cmath>

#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"
#include "handrawer/core/nn.hpp"

namespace handrawer::diffusion {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u) || ch == '_') {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

TextEncoder::TextEncoder(TextEncoderConfig config) : config_(config) {
    if (config_.width < 2 || config_.max_tokens < 1 || config_.buckets < 1) {
        throw ValidationError("invalid text encoder configuration");
    }
}

std::vector<double> TextEncoder::token_row(std::string_view token) const {
    const std::uint64_t bucket = fnv1a64(token) % static_cast<std::uint64_t>(config_.buckets);
    CounterRng rng(config_.seed, {bucket});
    std::vector<double> row(static_cast<std::size_t>(config_.width));
    rng.fill_normal(row, 1.0);
    return row;
}

Tensor TextEncoder::encode(const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw ValidationError("text encoder needs at least one token");
    const int L = config_.max_tokens, d = config_.width;
    Tensor out({L, d});
    for (int i = 0; i < L; ++i) {
        const std::string_view tok = i < static_cast<int>(tokens.size()) ? std::string_view(tokens[static_cast<std::size_t>(i)])
                                                                         : std::string_view("<pad>");
        const auto row = token_row(tok);
        const Tensor pos = nn::sinusoidal_embedding(i, d);
        for (int c = 0; c < d; ++c) out.at(i, c) = row[static_cast<std::size_t>(c)] + 0.5 * pos[static_cast<std::size_t>(c)];
    }
    return out;
}

}  // namespace handrawer::diffusion
