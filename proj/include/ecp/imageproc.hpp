#ifndef ECP_IMAGEPROC_HPP
#define ECP_IMAGEPROC_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "ecp/image.hpp"

namespace ecp {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// 3x3 camera-plane to ground-plane mapping in pixel coordinates.
struct Homography {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

    bool invertible(double tol = 1e-12) const { return std::fabs(m.determinant()) > tol; }
    Eigen::Vector2d apply(const Eigen::Vector2d& p) const {
        Eigen::Vector3d q = m * Eigen::Vector3d(p.x(), p.y(), 1.0);
        return {q.x() / q.z(), q.y() / q.z()};
    }
    Homography inverse() const { return {m.inverse().eval()}; }
};

/// Oriented rectangular region in pixel space. Orientation 0 is an
/// axis-aligned crop; orientation t tilts the window so a line running at
/// image direction 90+t deg (math, y-up) is vertical after extraction.
struct WindowRegion {
    Eigen::Vector2d center{0, 0};  // pixel coordinates
    int width = 0;
    int height = 0;
    double orientation_deg = 0.0;
};

enum class EdgeSide { left, right };

/// One-sided horizontal edge kernel. The left-side taps rise low-middle-high;
/// the right side is the mirror. Taps are shifted to zero mean before use.
struct EdgeKernel {
    std::vector<double> taps{-2, -1, 0, 1, 2};

    std::vector<double> zeroMean(EdgeSide side) const;
};

struct PixelCluster {
    std::vector<Eigen::Vector2i> pixels;  // sorted (y, x) ascending
    Eigen::Vector2d centroid{0, 0};
    double axis_deg = 0.0;  // principal axis, math convention, [0, 180)
};

// --- pixel pipeline primitives ---

/// Luma extraction: Y = 0.299 R + 0.587 G + 0.114 B, rounded half-up.
GrayImage yChannel(const RgbImage& rgb);

/// Inverse-mapped bilinear warp into a BEV image of `out_width` x `out_height`
/// at `meters_per_pixel`. H maps camera pixels to BEV pixels; pixels with no
/// source are 0. Throws on a non-invertible H.
GrayImage warpBev(const GrayImage& image, const Homography& h, int out_width, int out_height,
                  double meters_per_pixel);

/// Row-wise 1-D edge response, clamped to [0, 255]. Columns where the kernel
/// would read outside the window are left 0. Throws if the window is narrower
/// than the kernel.
GrayImage edgeConvolve(const GrayImage& window, EdgeSide side, const EdgeKernel& kernel = {});

/// Pixel offsets of the 5x1 structuring element rotated to `angle_deg`
/// (math convention, 90 = vertical in the image).
std::vector<Eigen::Vector2i> erosionElement(double angle_deg);

/// Morphological erosion by the rotated 5x1 element. Out-of-image neighbours
/// count as unset, so the result is always contained in the input.
BinaryImage directionalErode(const BinaryImage& binary, double angle_deg);

/// Pixel set iff its (nonzero) value >= max(floor, nearest-rank percentile of
/// the nonzero values).
BinaryImage adaptiveThreshold(const GrayImage& gray, double percentile, int floor);

/// Connected components where pixels within Chebyshev distance `gap` join one
/// cluster. Clusters are ordered by their first pixel in row-major order.
std::vector<PixelCluster> clusterPixels(const BinaryImage& binary, int gap);

/// Cut and derotate an oriented window; bilinear sampling, outside pixels 0.
/// Throws if the region center is outside the image.
GrayImage extractWindow(const GrayImage& image, const WindowRegion& region);

/// Map a pixel in the extracted-window frame back to source-image coordinates.
Eigen::Vector2d windowToImage(const WindowRegion& region, const Eigen::Vector2d& window_px);
Eigen::Vector2d imageToWindow(const WindowRegion& region, const Eigen::Vector2d& image_px);

/// Tile into block x block cells; cells holding >= min_count set pixels become
/// regions, with 8-adjacent valid cells merged into one bounding region.
std::vector<WindowRegion> validBlocks(const BinaryImage& binary, int block, int min_count);

}  // namespace ecp

#endif
