#include "handrawer/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "handrawer/core/binary_io.hpp"
#include "handrawer/core/errors.hpp"

namespace handrawer::data {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void write_png(const std::filesystem::path& path, const Tensor& img, int channels, int bits) {
    if (img.rank() != 3 || img.dim(0) != channels) {
        throw ValidationError("png writer expects a " + std::to_string(channels) + " x H x W raster, got " +
                              img.shape_str());
    }
    const int H = img.dim(1), W = img.dim(2);
    const int bytes = bits / 8;
    const double levels = bits == 8 ? 255.0 : 65535.0;
    std::vector<png_byte> rows(static_cast<std::size_t>(H) * W * channels * bytes);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < channels; ++c) {
                const auto v = static_cast<unsigned>(std::lround(clamp01(img.at(c, y, x)) * levels));
                const std::size_t o = ((static_cast<std::size_t>(y) * W + x) * channels + c) * bytes;
                if (bytes == 1) {
                    rows[o] = static_cast<png_byte>(v);
                } else {
                    rows[o] = static_cast<png_byte>(v >> 8);
                    rows[o + 1] = static_cast<png_byte>(v & 0xff);
                }
            }
        }
    }

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        File f(std::fopen(tmp.c_str(), "wb"));
        if (!f) throw Error("cannot open " + tmp.string() + " for writing");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw Error("libpng initialisation failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw Error("png encoding failed for " + path.string());
        }
        png_init_io(png, f.get());
        png_set_compression_level(png, 6);
        png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), bits,
                     channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t stride = static_cast<std::size_t>(W) * channels * bytes;
        for (int y = 0; y < H; ++y) png_write_row(png, rows.data() + static_cast<std::size_t>(y) * stride);
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

Tensor quantize(const Tensor& raster, int bits) {
    if (bits != 8 && bits != 16) throw ValidationError("quantize supports 8 or 16 bits");
    const double levels = bits == 8 ? 255.0 : 65535.0;
    Tensor out = raster;
    for (double& v : out.storage()) v = static_cast<double>(std::lround(clamp01(v) * levels)) / levels;
    return out;
}

void write_png_rgb8(const std::filesystem::path& path, const Tensor& rgb) { write_png(path, rgb, 3, 8); }

void write_png_gray16(const std::filesystem::path& path, const Tensor& gray) { write_png(path, gray, 1, 16); }

Tensor read_png(const std::filesystem::path& path) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f) throw Error("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw ParseError("signature", path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng initialisation failed");
    }
    std::vector<png_byte> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("pixels", "corrupt PNG data in " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int W = static_cast<int>(png_get_image_width(png, info));
    const int H = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    int bits = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bits < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    bits = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * static_cast<std::size_t>(H));
    std::vector<png_bytep> rows(static_cast<std::size_t>(H));
    for (int y = 0; y < H; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + static_cast<std::size_t>(y) * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 1 && channels != 3) throw ParseError("channels", "unsupported PNG channel count");
    const double levels = bits == 16 ? 65535.0 : 255.0;
    Tensor out({channels, H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < channels; ++c) {
                const std::size_t o = static_cast<std::size_t>(y) * stride +
                                      (static_cast<std::size_t>(x) * channels + c) * (bits == 16 ? 2 : 1);
                const unsigned v = bits == 16 ? (buffer[o] << 8 | buffer[o + 1]) : buffer[o];
                out.at(c, y, x) = v / levels;
            }
        }
    }
    return out;
}

}  // namespace handrawer::data
