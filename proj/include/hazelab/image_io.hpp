#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "hazelab/image.hpp"

namespace hazelab {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline bool has_suffix(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    std::string tail = s.substr(s.size() - suf.size());
    std::transform(tail.begin(), tail.end(), tail.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return tail == suf;
}

inline std::uint8_t quantize(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Reads 8-bit interleaved rows from a PNG file. Gray and palette images are
// expanded to RGB; an alpha channel is rejected.
inline std::vector<std::uint8_t> read_png_rgb8(const std::string& path, int& h, int& w) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open file: " + path);

    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw IoError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng init failure");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);

    if (width == 0 || height == 0) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("zero-dimension PNG: " + path);
    }
    if ((color & PNG_COLOR_MASK_ALPHA) || png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG with alpha channel is not supported: " + path);
    }
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    std::vector<std::uint8_t> buf(static_cast<std::size_t>(height) * width * 3);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y)
        rows[y] = buf.data() + static_cast<std::size_t>(y) * width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    h = static_cast<int>(height);
    w = static_cast<int>(width);
    return buf;
}

inline void write_png8(const std::string& path, int h, int w, int channels,
                       const std::vector<std::uint8_t>& buf) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open file for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng init failure");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(buf.data() + static_cast<std::size_t>(y) * w * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Binary PNM readers: P6 (RGB) and P5 (gray), maxval 255.
inline std::vector<std::uint8_t> read_pnm8(const std::string& path, int& h, int& w, int& channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::string magic;
    in >> magic;
    if (magic == "P6") channels = 3;
    else if (magic == "P5") channels = 1;
    else throw IoError("unsupported format (expected P6/P5 PNM or PNG): " + path);

    auto next_int = [&in, &path]() {
        // skip whitespace and '#' comments
        int c;
        while ((c = in.peek()) != EOF) {
            if (std::isspace(c)) { in.get(); }
            else if (c == '#') { std::string line; std::getline(in, line); }
            else break;
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw IoError("malformed PNM header: " + path);
        return v;
    };

    const long width = next_int();
    const long height = next_int();
    const long maxval = next_int();
    if (width < 1 || height < 1) throw IoError("zero-dimension PNM: " + path);
    if (maxval != 255) throw IoError("PNM maxval must be 255: " + path);
    in.get();  // single whitespace after maxval

    std::vector<std::uint8_t> buf(static_cast<std::size_t>(height) * width * channels);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw IoError("truncated PNM payload: " + path);
    h = static_cast<int>(height);
    w = static_cast<int>(width);
    return buf;
}

inline void write_pnm8(const std::string& path, int h, int w, int channels,
                       const std::vector<std::uint8_t>& buf) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << (channels == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failure: " + path);
}

}  // namespace detail

// Loads an 8-bit PNG (RGB or gray) or binary PPM/PGM. Byte v maps to v/255.
inline RgbImage load_image(const std::string& path) {
    int h = 0, w = 0;
    std::vector<std::uint8_t> buf;
    int channels = 3;
    if (detail::has_suffix(path, ".png")) {
        buf = detail::read_png_rgb8(path, h, w);
    } else {
        buf = detail::read_pnm8(path, h, w, channels);
    }
    RgbImage img(h, w);
    const std::size_t n_pix = img.pixels();
    for (std::size_t n = 0; n < n_pix; ++n)
        for (int c = 0; c < 3; ++c)
            img(n, c) = buf[n * channels + (channels == 3 ? c : 0)] / 255.0;
    return img;
}

// Saves as 8-bit RGB. Values are clamped to [0,1] before quantization.
inline void save_image(const RgbImage& img, const std::string& path) {
    std::vector<std::uint8_t> buf(img.pixels() * 3);
    for (std::size_t n = 0; n < img.pixels(); ++n)
        for (int c = 0; c < 3; ++c)
            buf[n * 3 + c] = detail::quantize(img(n, c));
    if (detail::has_suffix(path, ".png"))
        detail::write_png8(path, img.height(), img.width(), 3, buf);
    else
        detail::write_pnm8(path, img.height(), img.width(), 3, buf);
}

// Grayscale counterparts for transmission/depth maps (gray PNG or P5 PGM).
inline ScalarMap load_map(const std::string& path) {
    RgbImage img = load_image(path);
    ScalarMap m(img.height(), img.width());
    for (std::size_t n = 0; n < img.pixels(); ++n)
        m[n] = (img(n, 0) + img(n, 1) + img(n, 2)) / 3.0;
    return m;
}

inline void save_map(const ScalarMap& map, const std::string& path) {
    std::vector<std::uint8_t> buf(map.size());
    for (std::size_t n = 0; n < map.size(); ++n)
        buf[n] = detail::quantize(map[n]);
    if (detail::has_suffix(path, ".png"))
        detail::write_png8(path, map.height(), map.width(), 1, buf);
    else
        detail::write_pnm8(path, map.height(), map.width(), 1, buf);
}

}  // namespace hazelab
