#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "turbmit/core.hpp"

namespace turbmit {

// ---------------------------------------------------------------------------
// Grayscale image I/O: binary PGM (P5, 8/16-bit big-endian) and grayscale
// PNG (8/16-bit).  Intensities load as 64-bit floats; quantization happens
// only on write (clamp, round half to even).
// ---------------------------------------------------------------------------

namespace detail {

inline int pgm_next_token(std::istream& in, std::string& tok) {
    tok.clear();
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok.empty() ? EOF : 0;
}

inline Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image: " + path);
    std::string tok;
    if (pgm_next_token(in, tok) || tok != "P5")
        throw DataError("pgm: not a binary P5 file: " + path);
    long w = 0, h = 0, maxval = 0;
    try {
        if (pgm_next_token(in, tok)) throw DataError("");
        w = std::stol(tok);
        if (pgm_next_token(in, tok)) throw DataError("");
        h = std::stol(tok);
        if (pgm_next_token(in, tok)) throw DataError("");
        maxval = std::stol(tok);
    } catch (const std::exception&) {
        throw DataError("pgm: malformed header: " + path);
    }
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
        throw DataError("pgm: invalid dimensions or maxval: " + path);

    Image img(static_cast<int>(h), static_cast<int>(w));
    img.source = path;
    img.source_bit_depth = maxval > 255 ? 16 : 8;
    const std::size_t n = img.size();
    if (maxval > 255) {
        std::vector<unsigned char> raw(n * 2);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size())
            throw DataError("pgm: truncated payload: " + path);
        for (std::size_t i = 0; i < n; ++i)
            img.data[i] = static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1]);
    } else {
        std::vector<unsigned char> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size())
            throw DataError("pgm: truncated payload: " + path);
        for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<double>(raw[i]);
    }
    return img;
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

inline Image read_png(const std::string& path) {
    PngReadCloser ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw DataError("cannot open image: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw DataError("png: bad signature: " + path);
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw DataError("png: init failure");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw DataError("png: init failure");
    if (setjmp(png_jmpbuf(ctx.png))) throw DataError("png: corrupt file: " + path);
    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    const int depth = png_get_bit_depth(ctx.png, ctx.info);
    const int color = png_get_color_type(ctx.png, ctx.info);
    if (color != PNG_COLOR_TYPE_GRAY)
        throw DataError("png: only grayscale input is supported: " + path);
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    const std::size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
    std::vector<unsigned char> raw(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * rowbytes;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);

    Image img(static_cast<int>(h), static_cast<int>(w));
    img.source = path;
    img.source_bit_depth = depth == 16 ? 16 : 8;
    if (depth == 16) {
        for (std::size_t i = 0; i < img.size(); ++i)
            img.data[i] = static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1]);
    } else {
        for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = static_cast<double>(raw[i]);
    }
    return img;
}

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

inline Image read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw DataError("cannot open image: " + path);
    char magic[2] = {0, 0};
    probe.read(magic, 2);
    probe.close();
    Image img;
    if (magic[0] == 'P' && magic[1] == '5') {
        img = detail::read_pgm(path);
    } else if (static_cast<unsigned char>(magic[0]) == 0x89 && magic[1] == 'P') {
        img = detail::read_png(path);
    } else {
        throw DataError("unsupported image format: " + path);
    }
    for (double v : img.data)
        if (!std::isfinite(v)) throw DataError("image contains non-finite values: " + path);
    return img;
}

/// Quantizes and writes; format chosen by extension (.pgm or .png).
/// Values are clamped to [0, 2^depth - 1] and rounded half to even; negative
/// inputs clamp to 0 with a warning.
inline void write_image(const Image& img, const std::string& path, int bit_depth = 0) {
    if (img.height < 1 || img.width < 1) throw DataError("write image: empty image");
    if (bit_depth == 0) bit_depth = img.source_bit_depth;
    if (bit_depth != 8 && bit_depth != 16)
        throw DataError("write image: bit depth must be 8 or 16");
    const double maxval = bit_depth == 8 ? 255.0 : 65535.0;

    std::size_t negatives = 0;
    std::vector<unsigned char> raw;
    raw.reserve(img.size() * (bit_depth / 8));
    for (double v : img.data) {
        if (v < 0.0) ++negatives;
        const double q = std::nearbyint(std::clamp(v, 0.0, maxval));  // round half to even
        const unsigned int u = static_cast<unsigned int>(q);
        if (bit_depth == 16) raw.push_back(static_cast<unsigned char>(u >> 8));
        raw.push_back(static_cast<unsigned char>(u & 0xFF));
    }
    if (negatives > 0)
        warn("write image: " + std::to_string(negatives) + " negative values clamped to 0 in " +
             path);

    const bool is_png = path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0;
    if (is_png) {
        detail::PngWriteCloser ctx;
        ctx.fp = std::fopen(path.c_str(), "wb");
        if (!ctx.fp) throw DataError("cannot write image: " + path);
        ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        ctx.info = png_create_info_struct(ctx.png);
        if (!ctx.png || !ctx.info) throw DataError("png: init failure");
        if (setjmp(png_jmpbuf(ctx.png))) throw DataError("png: write failure: " + path);
        png_init_io(ctx.png, ctx.fp);
        png_set_IHDR(ctx.png, ctx.info, img.width, img.height, bit_depth,
                     PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(ctx.png, ctx.info);
        const std::size_t rowbytes = static_cast<std::size_t>(img.width) * (bit_depth / 8);
        std::vector<png_bytep> rows(img.height);
        for (int y = 0; y < img.height; ++y) rows[y] = raw.data() + y * rowbytes;
        png_write_image(ctx.png, rows.data());
        png_write_end(ctx.png, nullptr);
    } else {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write image: " + path);
        out << "P5\n" << img.width << " " << img.height << "\n"
            << static_cast<int>(maxval) << "\n";
        out.write(reinterpret_cast<const char*>(raw.data()),
                  static_cast<std::streamsize>(raw.size()));
        if (!out) throw DataError("write failed: " + path);
    }
}

}  // namespace turbmit
