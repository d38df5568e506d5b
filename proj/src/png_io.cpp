#include "ecp/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "ecp/imageproc.hpp"

namespace ecp {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes to 8-bit RGB rows regardless of the source color type.
std::vector<std::vector<png_byte>> readRows(const std::string& path, int& width, int& height) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error("cannot open PNG: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    std::vector<std::vector<png_byte>> rows(height);
    std::vector<png_bytep> row_ptrs(height);
    for (int y = 0; y < height; ++y) {
        rows[y].resize(png_get_rowbytes(png, info));
        row_ptrs[y] = rows[y].data();
    }
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return rows;
}

}  // namespace

RgbImage readPngRgb(const std::string& path) {
    int w = 0, h = 0;
    auto rows = readRows(path, w, h);
    RgbImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.r(y, x) = rows[y][3 * x];
            img.g(y, x) = rows[y][3 * x + 1];
            img.b(y, x) = rows[y][3 * x + 2];
        }
    return img;
}

GrayImage readPngGray(const std::string& path) { return yChannel(readPngRgb(path)); }

namespace {

void writeRows(const std::string& path, int width, int height, int color_type,
               const std::vector<std::vector<png_byte>>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error("cannot write PNG: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (const auto& row : rows) png_write_row(png, const_cast<png_bytep>(row.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void writePng(const std::string& path, const GrayImage& image) {
    std::vector<std::vector<png_byte>> rows(image.height());
    for (int y = 0; y < image.height(); ++y) {
        rows[y].resize(image.width());
        for (int x = 0; x < image.width(); ++x) rows[y][x] = image.at(x, y);
    }
    writeRows(path, image.width(), image.height(), PNG_COLOR_TYPE_GRAY, rows);
}

void writePng(const std::string& path, const RgbImage& image) {
    std::vector<std::vector<png_byte>> rows(image.height());
    for (int y = 0; y < image.height(); ++y) {
        rows[y].resize(static_cast<size_t>(image.width()) * 3);
        for (int x = 0; x < image.width(); ++x) {
            rows[y][3 * x] = image.r(y, x);
            rows[y][3 * x + 1] = image.g(y, x);
            rows[y][3 * x + 2] = image.b(y, x);
        }
    }
    writeRows(path, image.width(), image.height(), PNG_COLOR_TYPE_RGB, rows);
}

}  // namespace ecp
