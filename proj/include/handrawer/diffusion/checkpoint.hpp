#pragma once
// Versioned checkpoint container: a JSON header plus named float64 blobs.
//
// Byte layout (little-endian):
//   8   magic "HDCKPT\0\0"
//   u32 version (1)
//   u32 header length, then that many bytes of UTF-8 JSON
//   u32 blob count, then per blob, in name order:
//       u32 name length, name bytes, u32 rank, rank x u32 dims, f64 values
//   u32 crc32 of every preceding byte

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "handrawer/core/tensor.hpp"

namespace handrawer::diffusion {

struct Checkpoint {
    nlohmann::json header = nlohmann::json::object();
    std::map<std::string, Tensor> blobs;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Parses and verifies the whole container before returning anything.
Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes);

void save_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::filesystem::path& path);

}  // namespace handrawer::diffusion
