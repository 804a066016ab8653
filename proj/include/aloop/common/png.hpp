#pragma once

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "aloop/common/error.hpp"
#include "aloop/common/fs.hpp"

namespace aloop::png {

/// 8-bit grayscale raster.
struct Gray8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void on_error(png_structp png, png_const_charp msg) {
    auto* text = static_cast<std::string*>(png_get_error_ptr(png));
    if (text) *text = msg;
    png_longjmp(png, 1);
}

inline void on_warning(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8-bit grayscale PNG. Any decode failure (truncation, wrong type) throws IoError.
inline Gray8 read_gray8(const std::filesystem::path& path) {
    detail::FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open " + path.string());

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::on_error,
                                             detail::on_warning);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    Gray8 out;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path.string() + ": " + (err.empty() ? "png decode error" : err));
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
        err = "expected 8-bit grayscale";
        png_longjmp(png, 1);
    }
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.data.resize(static_cast<std::size_t>(out.width) * out.height);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = out.data.data() + static_cast<std::size_t>(y) * out.width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

/// Writes an 8-bit grayscale PNG atomically. Output bytes depend only on the raster.
inline void write_gray8(const std::filesystem::path& path, const Gray8& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        detail::FilePtr file(std::fopen(tmp.c_str(), "wb"));
        if (!file) throw IoError("cannot write " + tmp.string());
        std::string err;
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::on_error,
                                                  detail::on_warning);
        if (!png) throw IoError("png_create_write_struct failed");
        png_infop info = png_create_info_struct(png);
        std::vector<png_bytep> rows(img.height);
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw IoError(tmp.string() + ": " + err);
        }
        png_init_io(png, file.get());
        png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < img.height; ++y)
            rows[y] = const_cast<png_bytep>(img.data.data() + static_cast<std::size_t>(y) * img.width);
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace aloop::png
