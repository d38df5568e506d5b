#ifndef ECP_IMAGE_HPP
#define ECP_IMAGE_HPP

#include <Eigen/Dense>
#include <cstdint>

#include "ecp/geometry.hpp"

namespace ecp {

using MatU8 = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 8-bit single-channel image. For BEV images `meters_per_pixel` carries the
/// ground-plane scale; plain camera images leave it at 0.
struct GrayImage {
    MatU8 data;
    double meters_per_pixel = 0.0;

    GrayImage() = default;
    GrayImage(int width, int height, double mpp = 0.0)
        : data(MatU8::Zero(height, width)), meters_per_pixel(mpp) {}

    int width() const { return static_cast<int>(data.cols()); }
    int height() const { return static_cast<int>(data.rows()); }
    bool contains(int x, int y) const {
        return x >= 0 && x < width() && y >= 0 && y < height();
    }
    std::uint8_t at(int x, int y) const { return data(y, x); }
    std::uint8_t& at(int x, int y) { return data(y, x); }

    bool operator==(const GrayImage& o) const {
        return meters_per_pixel == o.meters_per_pixel && data.rows() == o.data.rows() &&
               data.cols() == o.data.cols() && data == o.data;
    }
};

/// Binary mask, one byte per pixel (0 or 1), same indexing as GrayImage.
struct BinaryImage {
    MatU8 data;

    BinaryImage() = default;
    BinaryImage(int width, int height) : data(MatU8::Zero(height, width)) {}

    int width() const { return static_cast<int>(data.cols()); }
    int height() const { return static_cast<int>(data.rows()); }
    bool contains(int x, int y) const {
        return x >= 0 && x < width() && y >= 0 && y < height();
    }
    bool test(int x, int y) const { return data(y, x) != 0; }
    void set(int x, int y, bool v = true) { data(y, x) = v ? 1 : 0; }
    long count() const { return (data.array() != 0).count(); }

    bool operator==(const BinaryImage& o) const {
        return data.rows() == o.data.rows() && data.cols() == o.data.cols() && data == o.data;
    }
};

/// Interleaved 8-bit RGB image.
struct RgbImage {
    MatU8 r, g, b;

    RgbImage() = default;
    RgbImage(int width, int height)
        : r(MatU8::Zero(height, width)),
          g(MatU8::Zero(height, width)),
          b(MatU8::Zero(height, width)) {}

    int width() const { return static_cast<int>(r.cols()); }
    int height() const { return static_cast<int>(r.rows()); }
};

/// BEV pixel <-> meter mapping. Meter frame: x right, y up (forward), origin
/// at the bottom-left image corner, center-of-pixel sampling.
inline Eigen::Vector2d pixelToMeters(const Eigen::Vector2d& px, int image_height, double mpp) {
    return {(px.x() + 0.5) * mpp, (image_height - px.y() - 0.5) * mpp};
}
inline Eigen::Vector2d metersToPixel(const Eigen::Vector2d& m, int image_height, double mpp) {
    return {m.x() / mpp - 0.5, image_height - m.y() / mpp - 0.5};
}

}  // namespace ecp

#endif
