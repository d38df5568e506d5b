#include "ecp/imageproc.hpp"

#include <algorithm>
#include <numeric>

namespace ecp {

namespace {

double bilinearSample(const GrayImage& img, double x, double y) {
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    double fx = x - x0;
    double fy = y - y0;
    auto px = [&](int xi, int yi) -> double {
        return img.contains(xi, yi) ? static_cast<double>(img.at(xi, yi)) : 0.0;
    };
    if (x0 < -1 || y0 < -1 || x0 >= img.width() || y0 >= img.height()) return 0.0;
    return px(x0, y0) * (1 - fx) * (1 - fy) + px(x0 + 1, y0) * fx * (1 - fy) +
           px(x0, y0 + 1) * (1 - fx) * fy + px(x0 + 1, y0 + 1) * fx * fy;
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

std::vector<double> EdgeKernel::zeroMean(EdgeSide side) const {
    std::vector<double> k = taps;
    double mean = std::accumulate(k.begin(), k.end(), 0.0) / static_cast<double>(k.size());
    for (double& t : k) t -= mean;
    if (side == EdgeSide::right) std::reverse(k.begin(), k.end());
    return k;
}

GrayImage yChannel(const RgbImage& rgb) {
    GrayImage out(rgb.width(), rgb.height());
    for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x) {
            double v = 0.299 * rgb.r(y, x) + 0.587 * rgb.g(y, x) + 0.114 * rgb.b(y, x);
            out.at(x, y) = static_cast<std::uint8_t>(std::clamp(roundHalfUp(v), 0, 255));
        }
    return out;
}

GrayImage warpBev(const GrayImage& image, const Homography& h, int out_width, int out_height,
                  double meters_per_pixel) {
    if (!h.invertible()) throw Error("warp_bev: homography is not invertible");
    Homography inv = h.inverse();
    GrayImage out(out_width, out_height, meters_per_pixel);
    for (int y = 0; y < out_height; ++y)
        for (int x = 0; x < out_width; ++x) {
            Eigen::Vector2d src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            double v = bilinearSample(image, src.x(), src.y());
            out.at(x, y) = static_cast<std::uint8_t>(std::clamp(roundHalfUp(v), 0, 255));
        }
    return out;
}

GrayImage edgeConvolve(const GrayImage& window, EdgeSide side, const EdgeKernel& kernel) {
    const std::vector<double> k = kernel.zeroMean(side);
    const int n = static_cast<int>(k.size());
    const int c = (n - 1) / 2;
    if (window.width() < n) throw Error("edge_convolve: window narrower than kernel");
    GrayImage out(window.width(), window.height(), window.meters_per_pixel);
    for (int y = 0; y < window.height(); ++y)
        for (int x = c; x <= window.width() - 1 - (n - 1 - c); ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * window.at(x + i - c, y);
            out.at(x, y) = static_cast<std::uint8_t>(std::clamp(roundHalfUp(acc), 0, 255));
        }
    return out;
}

std::vector<Eigen::Vector2i> erosionElement(double angle_deg) {
    const double cx = std::cos(deg2rad(angle_deg));
    const double cy = std::sin(deg2rad(angle_deg));
    std::vector<Eigen::Vector2i> offsets;
    for (int t = -2; t <= 2; ++t) {
        // image rows grow downward, so +direction means -dy
        Eigen::Vector2i o(roundHalfUp(t * cx), roundHalfUp(-t * cy));
        if (std::find(offsets.begin(), offsets.end(), o) == offsets.end()) offsets.push_back(o);
    }
    return offsets;
}

BinaryImage directionalErode(const BinaryImage& binary, double angle_deg) {
    const auto element = erosionElement(angle_deg);
    BinaryImage out(binary.width(), binary.height());
    for (int y = 0; y < binary.height(); ++y)
        for (int x = 0; x < binary.width(); ++x) {
            bool keep = true;
            for (const auto& o : element) {
                int nx = x + o.x(), ny = y + o.y();
                if (!binary.contains(nx, ny) || !binary.test(nx, ny)) {
                    keep = false;
                    break;
                }
            }
            if (keep) out.set(x, y);
        }
    return out;
}

BinaryImage adaptiveThreshold(const GrayImage& gray, double percentile, int floor) {
    std::vector<std::uint8_t> nonzero;
    nonzero.reserve(static_cast<size_t>(gray.width()) * gray.height() / 4);
    for (int y = 0; y < gray.height(); ++y)
        for (int x = 0; x < gray.width(); ++x)
            if (gray.at(x, y) > 0) nonzero.push_back(gray.at(x, y));
    BinaryImage out(gray.width(), gray.height());
    if (nonzero.empty()) return out;
    const auto n = static_cast<long>(nonzero.size());
    long rank = std::max<long>(1, static_cast<long>(std::ceil(percentile / 100.0 * n)));
    rank = std::min(rank, n);
    std::nth_element(nonzero.begin(), nonzero.begin() + (rank - 1), nonzero.end());
    const int threshold = std::max(floor, static_cast<int>(nonzero[rank - 1]));
    for (int y = 0; y < gray.height(); ++y)
        for (int x = 0; x < gray.width(); ++x)
            if (gray.at(x, y) > 0 && gray.at(x, y) >= threshold) out.set(x, y);
    return out;
}

std::vector<PixelCluster> clusterPixels(const BinaryImage& binary, int gap) {
    gap = std::max(gap, 1);
    std::vector<Eigen::Vector2i> pts;  // row-major order
    std::vector<int> index(static_cast<size_t>(binary.width()) * binary.height(), -1);
    for (int y = 0; y < binary.height(); ++y)
        for (int x = 0; x < binary.width(); ++x)
            if (binary.test(x, y)) {
                index[static_cast<size_t>(y) * binary.width() + x] = static_cast<int>(pts.size());
                pts.emplace_back(x, y);
            }
    UnionFind uf(static_cast<int>(pts.size()));
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        const auto& p = pts[i];
        // only forward neighbours; earlier ones already linked us
        for (int dy = 0; dy <= gap; ++dy)
            for (int dx = (dy == 0 ? 1 : -gap); dx <= gap; ++dx) {
                int nx = p.x() + dx, ny = p.y() + dy;
                if (!binary.contains(nx, ny)) continue;
                int j = index[static_cast<size_t>(ny) * binary.width() + nx];
                if (j >= 0) uf.unite(i, j);
            }
    }
    std::vector<int> root_to_cluster(pts.size(), -1);
    std::vector<PixelCluster> clusters;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        int r = uf.find(i);
        if (root_to_cluster[r] < 0) {
            root_to_cluster[r] = static_cast<int>(clusters.size());
            clusters.emplace_back();
        }
        clusters[root_to_cluster[r]].pixels.push_back(pts[i]);
    }
    for (auto& c : clusters) {
        std::sort(c.pixels.begin(), c.pixels.end(), [](const auto& a, const auto& b) {
            return a.y() != b.y() ? a.y() < b.y() : a.x() < b.x();
        });
        double sx = 0, sy = 0;
        for (const auto& p : c.pixels) {
            sx += p.x();
            sy += p.y();
        }
        const double n = static_cast<double>(c.pixels.size());
        c.centroid = {sx / n, sy / n};
        double mxx = 0, myy = 0, mxy = 0;
        for (const auto& p : c.pixels) {
            double dx = p.x() - c.centroid.x();
            double dy = -(p.y() - c.centroid.y());  // flip to math y-up
            mxx += dx * dx;
            myy += dy * dy;
            mxy += dx * dy;
        }
        c.axis_deg = wrap180(rad2deg(0.5 * std::atan2(2.0 * mxy, mxx - myy)));
    }
    return clusters;
}

Eigen::Vector2d windowToImage(const WindowRegion& region, const Eigen::Vector2d& window_px) {
    const double hw = (region.width - 1) / 2.0;
    const double hh = (region.height - 1) / 2.0;
    // window offsets in math y-up, rotate by +orientation, back to image y-down
    Eigen::Vector2d d_up(window_px.x() - hw, -(window_px.y() - hh));
    Eigen::Vector2d v = Eigen::Rotation2Dd(deg2rad(region.orientation_deg)) * d_up;
    return {region.center.x() + v.x(), region.center.y() - v.y()};
}

Eigen::Vector2d imageToWindow(const WindowRegion& region, const Eigen::Vector2d& image_px) {
    Eigen::Vector2d v(image_px.x() - region.center.x(), -(image_px.y() - region.center.y()));
    Eigen::Vector2d d_up = Eigen::Rotation2Dd(-deg2rad(region.orientation_deg)) * v;
    const double hw = (region.width - 1) / 2.0;
    const double hh = (region.height - 1) / 2.0;
    return {d_up.x() + hw, -d_up.y() + hh};
}

GrayImage extractWindow(const GrayImage& image, const WindowRegion& region) {
    if (!image.contains(roundHalfUp(region.center.x()), roundHalfUp(region.center.y())))
        throw Error("extract_window: region center outside image");
    GrayImage out(region.width, region.height, image.meters_per_pixel);
    for (int y = 0; y < region.height; ++y)
        for (int x = 0; x < region.width; ++x) {
            Eigen::Vector2d src = windowToImage(region, {static_cast<double>(x), static_cast<double>(y)});
            double v = bilinearSample(image, src.x(), src.y());
            out.at(x, y) = static_cast<std::uint8_t>(std::clamp(roundHalfUp(v), 0, 255));
        }
    return out;
}

std::vector<WindowRegion> validBlocks(const BinaryImage& binary, int block, int min_count) {
    const int tiles_x = (binary.width() + block - 1) / block;
    const int tiles_y = (binary.height() + block - 1) / block;
    std::vector<char> valid(static_cast<size_t>(tiles_x) * tiles_y, 0);
    for (int ty = 0; ty < tiles_y; ++ty)
        for (int tx = 0; tx < tiles_x; ++tx) {
            int count = 0;
            for (int y = ty * block; y < std::min((ty + 1) * block, binary.height()); ++y)
                for (int x = tx * block; x < std::min((tx + 1) * block, binary.width()); ++x)
                    if (binary.test(x, y)) ++count;
            if (count >= min_count) valid[static_cast<size_t>(ty) * tiles_x + tx] = 1;
        }
    UnionFind uf(tiles_x * tiles_y);
    for (int ty = 0; ty < tiles_y; ++ty)
        for (int tx = 0; tx < tiles_x; ++tx) {
            if (!valid[static_cast<size_t>(ty) * tiles_x + tx]) continue;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int nx = tx + dx, ny = ty + dy;
                    if (nx < 0 || ny < 0 || nx >= tiles_x || ny >= tiles_y) continue;
                    if (valid[static_cast<size_t>(ny) * tiles_x + nx])
                        uf.unite(ty * tiles_x + tx, ny * tiles_x + nx);
                }
        }
    struct Box {
        int x0, y0, x1, y1;
    };
    std::vector<int> root_to_box(static_cast<size_t>(tiles_x) * tiles_y, -1);
    std::vector<Box> boxes;
    for (int ty = 0; ty < tiles_y; ++ty)
        for (int tx = 0; tx < tiles_x; ++tx) {
            if (!valid[static_cast<size_t>(ty) * tiles_x + tx]) continue;
            int r = uf.find(ty * tiles_x + tx);
            int x0 = tx * block, y0 = ty * block;
            int x1 = std::min((tx + 1) * block, binary.width());
            int y1 = std::min((ty + 1) * block, binary.height());
            if (root_to_box[r] < 0) {
                root_to_box[r] = static_cast<int>(boxes.size());
                boxes.push_back({x0, y0, x1, y1});
            } else {
                Box& b = boxes[root_to_box[r]];
                b.x0 = std::min(b.x0, x0);
                b.y0 = std::min(b.y0, y0);
                b.x1 = std::max(b.x1, x1);
                b.y1 = std::max(b.y1, y1);
            }
        }
    std::vector<WindowRegion> regions;
    for (const Box& b : boxes) {
        WindowRegion r;
        r.center = {(b.x0 + b.x1 - 1) / 2.0, (b.y0 + b.y1 - 1) / 2.0};
        r.width = b.x1 - b.x0;
        r.height = b.y1 - b.y0;
        regions.push_back(r);
    }
    return regions;
}

}  // namespace ecp
