#include "handrawer/diffusion/checkpoint.hpp"

#include <cstring>

#include "handrawer/core/binary_io.hpp"
#include "handrawer/core/errors.hpp"

namespace handrawer::diffusion {

namespace {

constexpr char kMagic[8] = {'H', 'D', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    io::Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.str(ckpt.header.dump());
    w.u32(static_cast<std::uint32_t>(ckpt.blobs.size()));
    for (const auto& [name, t] : ckpt.blobs) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        w.bytes(t.data(), t.size() * sizeof(double));
    }
    w.seal();
    return w.buffer();
}

Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes) {
    io::Reader r(std::move(bytes));
    char magic[8];
    r.bytes(magic, sizeof magic, "magic");
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError("magic", "not a checkpoint");
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) throw ParseError("version", "unsupported version " + std::to_string(version));
    r.verify_seal("checkpoint");
    Checkpoint ckpt;
    try {
        ckpt.header = nlohmann::json::parse(r.str("header"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("header", e.what());
    }
    const std::uint32_t count = r.u32("blob_count");
    for (std::uint32_t b = 0; b < count; ++b) {
        std::string name = r.str("blob_name");
        const std::uint32_t rank = r.u32("blob_rank");
        if (rank > 8) throw ParseError("blob_rank", "implausible rank for '" + name + "'");
        std::vector<int> shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = static_cast<int>(r.u32("blob_dims"));
            n *= static_cast<std::size_t>(d);
        }
        if (n * sizeof(double) > r.remaining()) throw ParseError("blob_data", "blob '" + name + "' truncated");
        Tensor t(shape);
        r.bytes(t.data(), n * sizeof(double), "blob_data");
        ckpt.blobs.emplace(std::move(name), std::move(t));
    }
    if (r.remaining() != 0) throw ParseError("blob_count", "trailing bytes after last blob");
    return ckpt;
}

void save_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt) {
    io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint_file(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace handrawer::diffusion
