#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "core.hpp"

namespace meshforge {

/// Float image, rows top to bottom, channels interleaved.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

/// Little-endian PFM ("Pf" grey or "PF" RGB). PFM stores rows bottom to top.
inline void write_pfm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw FormatError("PFM supports 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path);
    out << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << "\n-1.0\n";
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    for (int y = img.height - 1; y >= 0; --y) {
        const float* r = img.data.data() + static_cast<std::size_t>(y) * row;
        for (std::size_t i = 0; i < row; ++i) {
            std::uint32_t u;
            std::memcpy(&u, &r[i], 4);
            const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                        static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
            out.write(reinterpret_cast<const char*>(b), 4);
        }
    }
    if (!out) throw FormatError("write failed: " + path);
}

inline Image read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    in >> magic >> w >> h >> scale;
    in.get();
    if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0) throw FormatError("bad PFM header: " + path);
    if (scale > 0) throw FormatError("big-endian PFM not supported: " + path);
    Image img(w, h, magic == "PF" ? 3 : 1);
    const std::size_t row = static_cast<std::size_t>(w) * img.channels;
    for (int y = h - 1; y >= 0; --y) {
        for (std::size_t i = 0; i < row; ++i) {
            unsigned char b[4];
            if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated PFM: " + path);
            const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                    (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
            std::memcpy(&img.data[static_cast<std::size_t>(y) * row + i], &u, 4);
        }
    }
    return img;
}

/// 8-bit PNG (grey, RGB or RGBA by channel count). Values are clamped to
/// [0,1] after `lo`/`hi` remapping.
inline void write_png(const std::string& path, const Image& img, float lo = 0.0f, float hi = 1.0f) {
    if (img.channels < 1 || img.channels > 4 || img.channels == 2) throw FormatError("PNG supports 1, 3 or 4 channels");
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw FormatError("cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng init failed");
    }
    std::vector<png_byte> rowbuf(static_cast<std::size_t>(img.width) * img.channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    const int type = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGBA;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const float span = hi - lo;
    for (int y = 0; y < img.height; ++y) {
        for (std::size_t i = 0; i < rowbuf.size(); ++i) {
            float v = (img.data[static_cast<std::size_t>(y) * rowbuf.size() + i] - lo) / span;
            if (!(v >= 0)) v = 0;
            if (v > 1) v = 1;
            rowbuf[i] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit PNG into [0,1] floats (palette/grey-alpha expanded).
inline Image read_png(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw FormatError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng init failed");
    }
    Image img;
    std::vector<png_byte> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("PNG read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = png_get_channels(png, info);
    buf.resize(static_cast<std::size_t>(w) * h * c);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * w * c;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    img = Image(w, h, c);
    for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0f;
    return img;
}

}  // namespace meshforge
