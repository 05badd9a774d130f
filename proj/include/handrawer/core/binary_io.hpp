#pragma once
// Little-endian record encoding shared by the mesh and checkpoint formats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace handrawer::io {

std::uint32_t crc32(const std::uint8_t* data, std::size_t n);

class Writer {
public:
    void bytes(const void* p, std::size_t n);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void str(std::string_view s);  // u32 length + bytes

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    // Appends the crc32 of everything written so far.
    void seal();

private:
    std::vector<std::uint8_t> buf_;
};

// Reads from an in-memory buffer; every read names the field it decodes so a
// short or malformed record surfaces as ParseError(field).
class Reader {
public:
    explicit Reader(std::vector<std::uint8_t> buf) : buf_(std::move(buf)) {}

    void bytes(void* p, std::size_t n, const char* field);
    std::uint32_t u32(const char* field);
    std::uint64_t u64(const char* field);
    float f32(const char* field);
    double f64(const char* field);
    std::string str(const char* field);

    std::size_t remaining() const noexcept { return buf_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }
    // Checks the trailing crc32 and strips it from the readable range.
    void verify_seal(const char* what);

private:
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& data);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace handrawer::io
