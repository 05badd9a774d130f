#include "handrawer/core/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "handrawer/core/errors.hpp"

namespace handrawer::io {

static_assert(std::endian::native == std::endian::little, "record encoding assumes a little-endian host");

std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = ::crc32(c, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

void Writer::bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
}
void Writer::u32(std::uint32_t v) { bytes(&v, 4); }
void Writer::u64(std::uint64_t v) { bytes(&v, 8); }
void Writer::f32(float v) { bytes(&v, 4); }
void Writer::f64(double v) { bytes(&v, 8); }
void Writer::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
}
void Writer::seal() { u32(crc32(buf_.data(), buf_.size())); }

void Reader::bytes(void* p, std::size_t n, const char* field) {
    if (remaining() < n) {
        throw ParseError(field, "record truncated: need " + std::to_string(n) + " bytes, " +
                                    std::to_string(remaining()) + " left");
    }
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
}
std::uint32_t Reader::u32(const char* field) {
    std::uint32_t v;
    bytes(&v, 4, field);
    return v;
}
std::uint64_t Reader::u64(const char* field) {
    std::uint64_t v;
    bytes(&v, 8, field);
    return v;
}
float Reader::f32(const char* field) {
    float v;
    bytes(&v, 4, field);
    return v;
}
double Reader::f64(const char* field) {
    double v;
    bytes(&v, 8, field);
    return v;
}
std::string Reader::str(const char* field) {
    const std::uint32_t n = u32(field);
    if (remaining() < n) throw ParseError(field, "string length " + std::to_string(n) + " exceeds record");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
}

void Reader::verify_seal(const char* what) {
    if (buf_.size() < pos_ + 4) throw ParseError("crc32", std::string(what) + " too short for checksum");
    const std::size_t body = buf_.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, buf_.data() + body, 4);
    if (stored != crc32(buf_.data(), body)) throw IntegrityError(std::string(what) + ": checksum mismatch");
    buf_.resize(body);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw Error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace handrawer::io
