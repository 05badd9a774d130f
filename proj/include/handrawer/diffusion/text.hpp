#pragma once
// Frozen text encoder: hashed token embedding table plus sinusoidal positions.
// Shared by the denoiser's cross-attention and the hand-module text branch.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "handrawer/core/tensor.hpp"

namespace handrawer::diffusion {

struct TextEncoderConfig {
    int width = 32;
    int max_tokens = 24;
    int buckets = 4096;
    std::uint64_t seed = 0x7e47;
};

// Lower-cases and splits on anything that is not a letter, digit or '_'.
std::vector<std::string> tokenize(std::string_view text);

class TextEncoder {
public:
    explicit TextEncoder(TextEncoderConfig config = {});

    const TextEncoderConfig& config() const noexcept { return config_; }

    // [max_tokens, width]; sequences are truncated or padded with a pad
    // token. Throws ValidationError on an empty sequence.
    Tensor encode(const std::vector<std::string>& tokens) const;
    Tensor encode_text(std::string_view text) const { return encode(tokenize(text)); }

private:
    std::vector<double> token_row(std::string_view token) const;

    TextEncoderConfig config_;
};

}  // namespace handrawer::diffusion
