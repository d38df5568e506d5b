#include "ecp/detector.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace ecp {

namespace {

double polyArc(const std::vector<Eigen::Vector2d>& pts) {
    double s = 0.0;
    for (size_t i = 1; i < pts.size(); ++i) s += (pts[i] - pts[i - 1]).norm();
    return s;
}

Eigen::Vector2d pointAtArc(const std::vector<Eigen::Vector2d>& pts, double arc) {
    if (pts.empty()) return {0, 0};
    double s = 0.0;
    for (size_t i = 1; i < pts.size(); ++i) {
        double d = (pts[i] - pts[i - 1]).norm();
        if (s + d >= arc && d > 0)
            return pts[i - 1] + (arc - s) / d * (pts[i] - pts[i - 1]);
        s += d;
    }
    return pts.back();
}

double directionAtArc(const std::vector<Eigen::Vector2d>& pts, double arc) {
    if (pts.size() < 2) return 90.0;
    double s = 0.0;
    for (size_t i = 1; i < pts.size(); ++i) {
        double d = (pts[i] - pts[i - 1]).norm();
        if ((s + d >= arc && d > 1e-9) || i + 1 == pts.size()) {
            Eigen::Vector2d v = pts[i] - pts[i - 1];
            return rad2deg(std::atan2(v.y(), v.x()));
        }
        s += d;
    }
    return 90.0;
}

// x of the candidate at row y (window pixel coordinates), linear between samples
double xAtRow(const LineCandidate& c, double y) {
    const auto& s = c.samples_px;
    if (s.size() < 2) return s.empty() ? 0.0 : s.front().x();
    for (size_t i = 1; i < s.size(); ++i) {
        double y0 = s[i - 1].y(), y1 = s[i].y();
        if ((y <= y0 && y >= y1) || (y >= y0 && y <= y1)) {
            double t = std::fabs(y1 - y0) < 1e-9 ? 0.0 : (y - y0) / (y1 - y0);
            return s[i - 1].x() + t * (s[i].x() - s[i - 1].x());
        }
    }
    // extrapolate from the nearer end
    const Eigen::Vector2d &a = s.front(), &b = s.back();
    double t = std::fabs(b.y() - a.y()) < 1e-9 ? 0.0 : (y - a.y()) / (b.y() - a.y());
    return a.x() + t * (b.x() - a.x());
}

Eigen::Vector2d catmullRom(const Eigen::Vector2d& p0, const Eigen::Vector2d& p1,
                           const Eigen::Vector2d& p2, const Eigen::Vector2d& p3, double t) {
    double t2 = t * t, t3 = t2 * t;
    return 0.5 * (2.0 * p1 + (p2 - p0) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

std::vector<LineCandidate> fitClusters(const std::vector<PixelCluster>& clusters,
                                       const GrayImage& response, const LineSpec& spec,
                                       double mpp, const DetectorConfig& cfg, EdgeSide side) {
    std::vector<LineCandidate> out;
    for (const auto& c : clusters) {
        if (static_cast<int>(c.pixels.size()) < cfg.min_pixels) continue;
        LineCandidate cand = fitSegment(c, response, spec, mpp, cfg.min_pixels);
        cand.side = side;
        out.push_back(std::move(cand));
    }
    return out;
}

void recomputeStats(PixelCluster& c) {
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
        double dy = -(p.y() - c.centroid.y());
        mxx += dx * dx;
        myy += dy * dy;
        mxy += dx * dy;
    }
    c.axis_deg = wrap180(rad2deg(0.5 * std::atan2(2.0 * mxy, mxx - myy)));
}

// speckle punches holes in an edge chain, splitting it into short collinear
// fragments; stitch those back together before fitting
std::vector<PixelCluster> mergeFragments(std::vector<PixelCluster> clusters, double mpp,
                                         const DetectorConfig& cfg) {
    double gap_px = 0.75 / mpp;
    if (cfg.dash_interval_m > cfg.dash_segment_length_m && cfg.dash_segment_length_m > 0)
        gap_px = std::min(gap_px, 0.5 * (cfg.dash_interval_m - cfg.dash_segment_length_m) / mpp);
    auto min_y = [](const PixelCluster& c) { return c.pixels.front().y(); };
    auto max_y = [](const PixelCluster& c) { return c.pixels.back().y(); };
    std::sort(clusters.begin(), clusters.end(),
              [&](const auto& a, const auto& b) { return min_y(a) < min_y(b); });
    std::vector<PixelCluster> out;
    for (auto& c : clusters) {
        bool merged = false;
        for (auto it = out.rbegin(); it != out.rend() && !merged; ++it) {
            PixelCluster& prev = *it;
            double gap = min_y(c) - max_y(prev);
            if (gap > gap_px) continue;
            // axes of tiny fragments are unreliable; only gate when both are real
            const size_t kSolid = 12;
            if (prev.pixels.size() >= kSolid && c.pixels.size() >= kSolid) {
                double axis_gap = std::fabs(wrap180(prev.axis_deg - c.axis_deg));
                axis_gap = std::min(axis_gap, 180.0 - axis_gap);
                if (axis_gap > 15.0) continue;
            }
            // extrapolate the bigger fragment's axis to the smaller's centroid
            const PixelCluster& big = prev.pixels.size() >= c.pixels.size() ? prev : c;
            const PixelCluster& small = prev.pixels.size() >= c.pixels.size() ? c : prev;
            double a = deg2rad(big.axis_deg);
            double x_pred = big.pixels.size() < kSolid || std::fabs(std::sin(a)) < 0.2
                                ? big.centroid.x()
                                : big.centroid.x() - std::cos(a) / std::sin(a) *
                                                         (small.centroid.y() - big.centroid.y());
            if (std::fabs(x_pred - small.centroid.x()) > 3.0) continue;
            prev.pixels.insert(prev.pixels.end(), c.pixels.begin(), c.pixels.end());
            recomputeStats(prev);
            merged = true;
        }
        if (!merged) out.push_back(std::move(c));
    }
    return out;
}

// shadow bands scale a whole row's intensity down, which drags its edge
// response under the window-wide threshold; boost dark rows back toward the
// window's typical brightness before convolving
GrayImage flattenRows(const GrayImage& window) {
    const int h = window.height(), w = window.width();
    std::vector<double> row_mean(h, 0.0);
    for (int y = 0; y < h; ++y) {
        double s = 0;
        for (int x = 0; x < w; ++x) s += window.at(x, y);
        row_mean[y] = s / w;
    }
    std::vector<double> sorted = row_mean;
    std::nth_element(sorted.begin(), sorted.begin() + h / 2, sorted.end());
    const double ref = sorted[h / 2];
    GrayImage out(w, h, window.meters_per_pixel);
    for (int y = 0; y < h; ++y) {
        // only rows markedly darker than typical are shadowed; leave mild
        // speckle-level variation alone
        double gain = row_mean[y] > 1.0 && row_mean[y] < 0.85 * ref
                          ? std::min(3.0, ref / row_mean[y])
                          : 1.0;
        for (int x = 0; x < w; ++x)
            out.at(x, y) = static_cast<std::uint8_t>(
                std::min(255, roundHalfUp(window.at(x, y) * gain)));
    }
    return out;
}

// full window pipeline on one side: response, threshold, directional erode,
// cluster, stitch, fit
std::vector<LineCandidate> windowCandidates(const GrayImage& window, EdgeSide side,
                                            const LineSpec& spec, const DetectorConfig& cfg) {
    GrayImage resp = edgeConvolve(flattenRows(window), side, cfg.kernel);
    BinaryImage mask = adaptiveThreshold(resp, cfg.threshold_percentile, cfg.threshold_floor);
    mask = directionalErode(mask, 90.0);
    auto clusters = clusterPixels(mask, cfg.cluster_gap);
    clusters = mergeFragments(std::move(clusters), window.meters_per_pixel, cfg);
    return fitClusters(clusters, resp, spec, window.meters_per_pixel, cfg, side);
}

double extentThreshold(const LineSpec& spec, const DetectorConfig& cfg) {
    if (spec.continuity == LineContinuity::dashed && cfg.dash_interval_m > 0)
        return 1.5 * cfg.dash_interval_m;
    return cfg.window_h_m;
}

// pick the direction representative (a or a+180) closest to `reference`
double alignDirection(double line_angle, double reference) {
    double a = wrap360(line_angle);
    double b = wrap360(line_angle + 180.0);
    return angleDiff(a, reference) <= angleDiff(b, reference) ? a : b;
}

}  // namespace

DetectorConfig configForSpec(const LineSpec& spec, const DetectableLaneSet* set) {
    DetectorConfig cfg;
    if (set) {
        cfg.window_w_m = set->suggested_window_w_m;
        cfg.window_h_m = set->suggested_window_h_m;
        if (set->dash_interval_m > 0) cfg.dash_interval_m = set->dash_interval_m;
    }
    if (spec.continuity == LineContinuity::dashed) {
        if (spec.dash_interval_m > 0) cfg.dash_interval_m = spec.dash_interval_m;
        cfg.dash_segment_length_m = spec.dash_segment_length_m;
        // the window must hold a whole mark to measure its length
        cfg.window_h_m = std::max(cfg.window_h_m, cfg.dash_segment_length_m + 1.5);
    }
    if (spec.geometry == LineGeometry::curved) cfg.turn_limit_deg = std::max(cfg.turn_limit_deg, 10.0);
    return cfg;
}

std::string toString(Termination t) {
    switch (t) {
        case Termination::image_edge: return "image_edge";
        case Termination::stop_line: return "stop_line";
        case Termination::split: return "split";
        case Termination::merge: return "merge";
        case Termination::lost: return "lost";
    }
    return "lost";
}

double DetectedLine::length() const { return polyArc(polyline_m); }

LineCandidate fitSegment(const PixelCluster& cluster, const GrayImage& response,
                         const LineSpec& spec, double meters_per_pixel, int min_pixels) {
    const int n = static_cast<int>(cluster.pixels.size());
    if (n < min_pixels) throw Error("fit_segment: cluster below min_pixels");

    LineCandidate cand;
    cand.n_pixels = n;
    double resp_sum = 0.0;
    for (const auto& p : cluster.pixels)
        if (response.contains(p.x(), p.y())) resp_sum += response.at(p.x(), p.y());
    cand.mean_response = resp_sum / n;

    const Eigen::Vector2d c = cluster.centroid;
    if (spec.geometry == LineGeometry::straight) {
        // total least squares via second moments, image y flipped to math-up
        double sxx = 0, syy = 0, sxy = 0;
        for (const auto& p : cluster.pixels) {
            double dx = p.x() - c.x();
            double dy = -(p.y() - c.y());
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        double angle = wrap180(rad2deg(0.5 * std::atan2(2.0 * sxy, sxx - syy)));
        Eigen::Vector2d dir_img(std::cos(deg2rad(angle)), -std::sin(deg2rad(angle)));
        double tmin = 0, tmax = 0;
        for (const auto& p : cluster.pixels) {
            double t = (p.x() - c.x()) * dir_img.x() + (p.y() - c.y()) * dir_img.y();
            tmin = std::min(tmin, t);
            tmax = std::max(tmax, t);
        }
        // half-pixel footprint at each end, so an n-pixel column spans n pixels
        Eigen::Vector2d a = c + (tmin - 0.5) * dir_img;
        Eigen::Vector2d b = c + (tmax + 0.5) * dir_img;
        if (a.y() < b.y()) std::swap(a, b);  // p0 is the lower endpoint
        cand.p0_px = a;
        cand.p1_px = b;
        cand.samples_px = {a, b};
        cand.angle_deg = angle;
        cand.length_m = (b - a).norm() * meters_per_pixel;
    } else {
        // per-row centroids, lowest row first, smoothed with a Catmull-Rom pass
        std::map<int, std::pair<double, int>> rows;
        for (const auto& p : cluster.pixels) {
            auto& r = rows[p.y()];
            r.first += p.x();
            r.second += 1;
        }
        std::vector<Eigen::Vector2d> pts;
        for (auto it = rows.rbegin(); it != rows.rend(); ++it)
            pts.push_back({it->second.first / it->second.second, static_cast<double>(it->first)});
        // control points every few rows, endpoints kept
        const int step = std::max(1, static_cast<int>(pts.size()) / 8);
        std::vector<Eigen::Vector2d> ctrl;
        for (size_t i = 0; i < pts.size(); i += step) ctrl.push_back(pts[i]);
        if (ctrl.back() != pts.back()) ctrl.push_back(pts.back());
        std::vector<Eigen::Vector2d> samples;
        if (ctrl.size() < 3) {
            samples = ctrl;
        } else {
            for (size_t i = 0; i + 1 < ctrl.size(); ++i) {
                const Eigen::Vector2d& p0 = ctrl[i == 0 ? 0 : i - 1];
                const Eigen::Vector2d& p1 = ctrl[i];
                const Eigen::Vector2d& p2 = ctrl[i + 1];
                const Eigen::Vector2d& p3 = ctrl[std::min(i + 2, ctrl.size() - 1)];
                samples.push_back(p1);
                samples.push_back(catmullRom(p0, p1, p2, p3, 0.5));
            }
            samples.push_back(ctrl.back());
        }
        cand.samples_px = samples;
        cand.p0_px = samples.front();
        cand.p1_px = samples.back();
        Eigen::Vector2d chord = cand.p1_px - cand.p0_px;
        cand.angle_deg = wrap180(rad2deg(std::atan2(-chord.y(), chord.x())));
        cand.length_m = polyArc(samples) * meters_per_pixel;
    }
    cand.score = cand.length_m * cand.mean_response;
    return cand;
}

namespace {

// defined after probeBar; classifies a suspected branch around `brk`. When
// the departing direction is already known (from a window's off-axis edge),
// `branch_dir_hint` skips the local structure estimation.
std::optional<SplitMergeEvent> classifyBranch(const GrayImage& bev, const Eigen::Vector2d& brk,
                                              LaneSide side, double main_dir,
                                              const DetectorConfig& cfg,
                                              std::optional<double> branch_dir_hint = std::nullopt);

}  // namespace

std::optional<LineCandidate> filterCandidates(std::vector<LineCandidate> candidates,
                                              double expected_direction_deg, const LineSpec& spec,
                                              const DetectorConfig& cfg) {
    std::optional<LineCandidate> best;
    for (auto& c : candidates) {
        if (lineAngleDiff(c.angle_deg, expected_direction_deg) > cfg.turn_limit_deg + 1e-9)
            continue;
        if (spec.continuity == LineContinuity::dashed && cfg.dash_segment_length_m > 0 &&
            (c.length_m < cfg.minMarkLength() || c.length_m > cfg.maxMarkLength()))
            continue;
        if (!best || c.score > best->score) best = std::move(c);
    }
    return best;
}

DetectedLine detectLine(const GrayImage& bev, const DetectStart& start, const LineSpec& spec,
                        const DetectorConfig& cfg) {
    if (bev.meters_per_pixel <= 0) throw Error("detect_line: image has no meters_per_pixel");
    const bool dashed = spec.continuity == LineContinuity::dashed;
    if (dashed && cfg.dash_interval_m <= 0)
        throw Error("detect_line: dashed spec without dash interval");

    const double mpp = bev.meters_per_pixel;
    const int w_px = std::max(static_cast<int>(cfg.kernel.taps.size()) + 2,
                              roundHalfUp(cfg.window_w_m / mpp));
    const int h_px = std::max(4, roundHalfUp(cfg.window_h_m / mpp));
    const double h_m = h_px * mpp;

    {
        Eigen::Vector2d p0 = metersToPixel(start.point_m, bev.height(), mpp);
        if (!bev.contains(roundHalfUp(p0.x()), roundHalfUp(p0.y())))
            throw Error("detect_line: start point outside image");
    }

    DetectedLine out;
    out.spec = spec;

    double dir = start.direction_deg;
    Eigen::Vector2d center_m = start.point_m + 0.5 * h_m * unitVector(dir);

    double arc = 0.0;
    bool seen_left = false, seen_right = false, broke_left = false, broke_right = false;
    double left_arc = 0.0, right_arc = 0.0;
    int empty_run = 0;
    int hit_windows = 0;
    double resp_acc = 0.0;
    const int max_windows = 500;

    // branch-wedge bookkeeping: consecutive windows showing an off-axis edge
    int deviant_run = 0;
    LaneSide deviant_side = LaneSide::right;
    double deviant_near_off = 1e9;
    Eigen::Vector2d deviant_junction{0, 0};
    double deviant_dir = dir;
    std::optional<std::tuple<Eigen::Vector2d, LaneSide, double>> armed_deviant;

    for (int iter = 0; iter < max_windows; ++iter) {
        Eigen::Vector2d center_px = metersToPixel(center_m, bev.height(), mpp);
        if (!bev.contains(roundHalfUp(center_px.x()), roundHalfUp(center_px.y()))) {
            out.termination = Termination::image_edge;
            break;
        }

        WindowRecord rec;
        rec.region = {center_px, w_px, h_px, dir - 90.0};
        GrayImage win = extractWindow(bev, rec.region);

        auto cands_l = windowCandidates(win, EdgeSide::left, spec, cfg);
        auto cands_r = windowCandidates(win, EdgeSide::right, spec, cfg);

        // a long off-axis edge rooted at the centerline marks a branch wedge;
        // the angle gate below would silently drop it, so note it here
        if (cfg.probe_split_merge) {
            const double cx_win = (w_px - 1) / 2.0;
            bool found = false;
            for (const auto* cands : {&cands_l, &cands_r})
                for (const auto& c : *cands) {
                    double dev = lineAngleDiff(c.angle_deg, 90.0);
                    if (dev < 8.0 || dev > 70.0 || c.length_m < 0.4) continue;
                    bool p0_near = std::fabs(c.p0_px.x() - cx_win) <= std::fabs(c.p1_px.x() - cx_win);
                    const Eigen::Vector2d& near_p = p0_near ? c.p0_px : c.p1_px;
                    const Eigen::Vector2d& far_p = p0_near ? c.p1_px : c.p0_px;
                    double near_off = std::fabs(near_p.x() - cx_win);
                    if (near_off > 0.6 / mpp) continue;
                    found = true;
                    LaneSide c_side = far_p.x() > cx_win ? LaneSide::right : LaneSide::left;
                    if (deviant_run > 0 && c_side != deviant_side) continue;
                    if (deviant_run == 0 || near_off < deviant_near_off) {
                        deviant_side = c_side;
                        deviant_near_off = near_off;
                        deviant_junction = pixelToMeters(windowToImage(rec.region, near_p),
                                                         bev.height(), mpp);
                        // candidate angle from window coords to an up-aligned
                        // image direction
                        deviant_dir = alignDirection(c.angle_deg + rec.region.orientation_deg, dir);
                    }
                }
            if (found) {
                ++deviant_run;
                if (!armed_deviant)
                    armed_deviant = std::make_tuple(deviant_junction, deviant_side, deviant_dir);
            } else {
                deviant_run = 0;
                deviant_near_off = 1e9;
            }
        }

        rec.left = filterCandidates(std::move(cands_l), 90.0, spec, cfg);
        rec.right = filterCandidates(std::move(cands_r), 90.0, spec, cfg);

        // drop unpaired edges that disagree wildly in position when both exist
        if (rec.left && rec.right) {
            double sep = std::fabs(xAtRow(*rec.left, (h_px - 1) / 2.0) -
                                   xAtRow(*rec.right, (h_px - 1) / 2.0)) * mpp;
            if (sep > cfg.pair_max_separation_m) {
                if (rec.left->score >= rec.right->score)
                    rec.right.reset();
                else
                    rec.left.reset();
            }
        }
        rec.hit = rec.left.has_value() || rec.right.has_value();

        if (!rec.hit) {
            out.windows.push_back(rec);
            ++empty_run;
            if (empty_run > cfg.max_empty_windows) {
                out.termination = Termination::lost;
                break;
            }
            center_m += (dashed ? cfg.dash_interval_m : 0.5 * h_m) * unitVector(dir);
            continue;
        }
        empty_run = 0;
        ++hit_windows;

        // centerline samples of this window, in window pixels
        const double half_w_px = 0.5 * cfg.line_width_m / mpp;
        double y_lo, y_hi;  // image rows, lo = larger value (lower in image)
        if (rec.left && rec.right) {
            y_lo = std::min(std::max(rec.left->p0_px.y(), rec.left->p1_px.y()),
                            std::max(rec.right->p0_px.y(), rec.right->p1_px.y()));
            y_hi = std::max(std::min(rec.left->p0_px.y(), rec.left->p1_px.y()),
                            std::min(rec.right->p0_px.y(), rec.right->p1_px.y()));
        } else {
            const LineCandidate& c = rec.left ? *rec.left : *rec.right;
            y_lo = std::max(c.p0_px.y(), c.p1_px.y());
            y_hi = std::min(c.p0_px.y(), c.p1_px.y());
        }
        std::vector<Eigen::Vector2d> center_win;
        const int k_samples = 5;
        for (int k = 0; k < k_samples; ++k) {
            double y = y_lo + (y_hi - y_lo) * k / (k_samples - 1);
            double x;
            if (rec.left && rec.right)
                x = 0.5 * (xAtRow(*rec.left, y) + xAtRow(*rec.right, y));
            else if (rec.left)
                x = xAtRow(*rec.left, y) + half_w_px;
            else
                x = xAtRow(*rec.right, y) - half_w_px;
            center_win.push_back({x, y});
        }

        std::vector<Eigen::Vector2d> center_pts;
        for (const auto& p : center_win) {
            Eigen::Vector2d img = windowToImage(rec.region, p);
            center_pts.push_back(pixelToMeters(img, bev.height(), mpp));
        }

        // append with forward progress only
        Eigen::Vector2d u = unitVector(dir);
        for (const auto& p : center_pts) {
            if (!out.polyline_m.empty()) {
                Eigen::Vector2d d = p - out.polyline_m.back();
                if (d.dot(u) <= 0.02) continue;
                arc += d.norm();
            }
            out.polyline_m.push_back(p);
        }

        resp_acc += (rec.left ? rec.left->mean_response : 0.0) +
                    (rec.right ? rec.right->mean_response : 0.0);

        if (rec.left) {
            seen_left = true;
            if (!broke_left) left_arc = arc;
        } else if (seen_left && !broke_left) {
            broke_left = true;
            out.left_break_m = pointAtArc(out.polyline_m, left_arc);
        }
        if (rec.right) {
            seen_right = true;
            if (!broke_right) right_arc = arc;
        } else if (seen_right && !broke_right) {
            broke_right = true;
            out.right_break_m = pointAtArc(out.polyline_m, right_arc);
        }

        // heading update, clamped to the per-window turn limit
        double raw = directionAtArc(center_pts, polyArc(center_pts) * 0.5);
        double aligned = alignDirection(raw, dir);
        double delta = angleDelta(dir, aligned);
        delta = std::clamp(delta, -cfg.turn_limit_deg, cfg.turn_limit_deg);
        dir = wrap360(dir + delta);

        out.windows.push_back(rec);

        Eigen::Vector2d prev_center = center_m;
        if (dashed) {
            Eigen::Vector2d mark_mid = 0.5 * (center_pts.front() + center_pts.back());
            center_m = mark_mid + cfg.dash_interval_m * unitVector(dir);
        } else {
            center_m = center_pts.back() + 0.25 * h_m * unitVector(dir);
        }
        // at the line's end the fitted top stops advancing; force progress so
        // the chain walks off the paint and goes lost instead of spinning
        double min_adv = dashed ? 0.5 * cfg.dash_interval_m : 0.4 * h_m;
        if ((center_m - prev_center).dot(unitVector(dir)) < min_adv)
            center_m = prev_center + min_adv * unitVector(dir);
    }

    out.left_length_m = broke_left ? left_arc : arc;
    out.right_length_m = broke_right ? right_arc : arc;
    if (!out.left_break_m && broke_left) out.left_break_m = pointAtArc(out.polyline_m, left_arc);
    if (!out.right_break_m && broke_right) out.right_break_m = pointAtArc(out.polyline_m, right_arc);

    if (!out.windows.empty()) {
        double hit_frac = static_cast<double>(hit_windows) / out.windows.size();
        double resp = hit_windows > 0 ? resp_acc / (2.0 * hit_windows) : 0.0;
        out.confidence = hit_frac * std::min(1.0, resp / 128.0);
    }

    if (cfg.probe_split_merge && armed_deviant) {
        // the off-axis edge pins both the junction and the departing direction
        const auto& [junction, j_side, j_dir] = *armed_deviant;
        out.event = classifyBranch(bev, junction, j_side, start.direction_deg, cfg, j_dir);
    }
    if (cfg.probe_split_merge && !out.event &&
        std::fabs(out.left_length_m - out.right_length_m) > extentThreshold(spec, cfg))
        out.event = detectSplitMerge(out, bev, cfg);
    if (out.event)
        out.termination = out.event->split ? Termination::split : Termination::merge;
    if (!out.event && out.termination == Termination::lost && cfg.probe_stop_line &&
        !out.polyline_m.empty()) {
        StopLineResult sl = detectStopLine(bev, out, cfg);
        if (sl.found) {
            out.stop_line = sl;
            out.termination = Termination::stop_line;
        }
    }
    return out;
}

namespace {

// probe one window for a straight bar running along `bar_direction_deg`;
// returns the best passing candidate endpoints in meters
std::optional<std::pair<Eigen::Vector2d, Eigen::Vector2d>> probeBar(
    const GrayImage& bev, const Eigen::Vector2d& center_m, double bar_direction_deg,
    const DetectorConfig& cfg, double angle_tol_deg, double min_length_m,
    double bar_width_m = 0.0) {
    const double mpp = bev.meters_per_pixel;
    Eigen::Vector2d center_px = metersToPixel(center_m, bev.height(), mpp);
    if (!bev.contains(roundHalfUp(center_px.x()), roundHalfUp(center_px.y()))) return std::nullopt;
    const int w_px = std::max(static_cast<int>(cfg.kernel.taps.size()) + 2,
                              roundHalfUp(cfg.window_w_m / mpp));
    const int h_px = std::max(4, roundHalfUp(cfg.window_h_m / mpp));
    WindowRegion region{center_px, w_px, h_px, bar_direction_deg - 90.0};
    GrayImage win = extractWindow(bev, region);

    LineSpec probe_spec;  // plain solid straight
    std::optional<LineCandidate> best;
    for (EdgeSide side : {EdgeSide::left, EdgeSide::right}) {
        auto cands = windowCandidates(win, side, probe_spec, cfg);
        for (auto& c : cands) {
            if (lineAngleDiff(c.angle_deg, 90.0) > angle_tol_deg) continue;
            if (c.length_m < min_length_m) continue;
            if (!best || c.score > best->score) best = std::move(c);
        }
    }
    if (!best) return std::nullopt;
    // the fit follows one paint edge; report the bar's center instead
    double shift = 0.5 * bar_width_m / mpp * (best->side == EdgeSide::left ? 1.0 : -1.0);
    Eigen::Vector2d p0 = best->p0_px + Eigen::Vector2d(shift, 0.0);
    Eigen::Vector2d p1 = best->p1_px + Eigen::Vector2d(shift, 0.0);
    Eigen::Vector2d a = pixelToMeters(windowToImage(region, p0), bev.height(), mpp);
    Eigen::Vector2d b = pixelToMeters(windowToImage(region, p1), bev.height(), mpp);
    return std::make_pair(a, b);
}

}  // namespace

StopLineResult detectStopLine(const GrayImage& bev, const DetectedLine& ended_line,
                              const DetectorConfig& cfg) {
    StopLineResult res;
    if (ended_line.polyline_m.size() < 2) return res;
    const Eigen::Vector2d tip = ended_line.polyline_m.back();
    const double total = polyArc(ended_line.polyline_m);
    const double dir = directionAtArc(ended_line.polyline_m, total);
    const Eigen::Vector2d u = unitVector(dir);
    const Eigen::Vector2d perp = unitVector(dir - 90.0);

    const double ahead = 0.25 * cfg.window_h_m;
    const double off = 0.45 * cfg.window_h_m;
    bool any = false;
    Eigen::Vector2d lo{0, 0}, hi{0, 0};
    for (double s : {-1.0, 1.0}) {
        auto bar = probeBar(bev, tip + ahead * u + s * off * perp, dir + 90.0, cfg, 15.0, 0.5,
                            1.5 * cfg.line_width_m);
        if (!bar) continue;
        if (!any) {
            lo = bar->first;
            hi = bar->second;
            any = true;
        } else {
            // extend to the extreme endpoints along the bar
            Eigen::Vector2d bar_dir = (hi - lo).normalized();
            for (const Eigen::Vector2d& p : {bar->first, bar->second}) {
                double t = (p - lo).dot(bar_dir);
                if (t < 0) lo = p;
                if (t > (hi - lo).norm()) hi = p;
            }
        }
    }
    if (!any) return res;
    res.found = true;
    res.a_m = lo;
    res.b_m = hi;
    return res;
}

std::optional<SplitMergeEvent> detectSplitMerge(const DetectedLine& line, const GrayImage& bev,
                                                const DetectorConfig& cfg) {
    if (line.polyline_m.size() < 2) return std::nullopt;
    const double mpp = bev.meters_per_pixel;
    const double thr = extentThreshold(line.spec, cfg);
    const double diff = line.left_length_m - line.right_length_m;
    if (std::fabs(diff) <= thr) return std::nullopt;

    // the shorter edge chain is where the geometry departs
    const LaneSide side = diff > 0 ? LaneSide::right : LaneSide::left;
    Eigen::Vector2d brk;
    if (side == LaneSide::right && line.right_break_m)
        brk = *line.right_break_m;
    else if (side == LaneSide::left && line.left_break_m)
        brk = *line.left_break_m;
    else
        brk = pointAtArc(line.polyline_m, std::min(line.left_length_m, line.right_length_m));
    const double main_dir = directionAtArc(
        line.polyline_m, std::min(line.left_length_m, line.right_length_m));
    return classifyBranch(bev, brk, side, main_dir, cfg);
}

namespace {

std::optional<SplitMergeEvent> classifyBranch(const GrayImage& bev, const Eigen::Vector2d& brk,
                                              LaneSide side, double main_dir,
                                              const DetectorConfig& cfg,
                                              std::optional<double> branch_dir_hint) {
    const double mpp = bev.meters_per_pixel;
    if (branch_dir_hint) {
        const double reach = 1.4 * cfg.window_h_m;
        Eigen::Vector2d u = unitVector(*branch_dir_hint);
        // a probe hit parallel to the main line is the line itself, not paint
        // of a departing branch
        auto branch_hit = [&](const Eigen::Vector2d& at) {
            auto bar = probeBar(bev, at, *branch_dir_hint, cfg, 18.0, 0.5);
            if (!bar) return false;
            Eigen::Vector2d d = bar->second - bar->first;
            return lineAngleDiff(rad2deg(std::atan2(d.y(), d.x())), main_dir) >= 12.0;
        };
        bool up = branch_hit(brk + reach * u);
        bool down = branch_hit(brk - reach * u);
        if (up == down) return std::nullopt;
        SplitMergeEvent ev;
        ev.position_m = brk;
        ev.split = up;
        ev.side = side;
        return ev;
    }
    // estimate the departing direction from off-axis structure around the break
    Eigen::Vector2d brk_px = metersToPixel(brk, bev.height(), mpp);
    if (!bev.contains(roundHalfUp(brk_px.x()), roundHalfUp(brk_px.y()))) return std::nullopt;
    const int est = std::max(8, roundHalfUp(2.0 * cfg.window_h_m / mpp));
    WindowRegion est_region{brk_px, est, est, main_dir - 90.0};
    GrayImage est_win = extractWindow(bev, est_region);

    GrayImage resp_l = edgeConvolve(est_win, EdgeSide::left, cfg.kernel);
    GrayImage resp_r = edgeConvolve(est_win, EdgeSide::right, cfg.kernel);
    BinaryImage mask = adaptiveThreshold(resp_l, cfg.threshold_percentile, cfg.threshold_floor);
    BinaryImage mask_r = adaptiveThreshold(resp_r, cfg.threshold_percentile, cfg.threshold_floor);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask_r.test(x, y)) mask.set(x, y);

    // blank the main line's own edges so the departing paint clusters alone
    const double cx = (est - 1) / 2.0;
    const double band = 0.5 * cfg.line_width_m / mpp + 3.0;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (std::fabs(x - cx) <= band) mask.set(x, y, false);
    std::optional<PixelCluster> dep;
    for (const auto& c : clusterPixels(mask, cfg.cluster_gap)) {
        if (static_cast<int>(c.pixels.size()) < cfg.min_pixels) continue;
        double dev = lineAngleDiff(c.axis_deg, 90.0);
        if (dev < 10.0 || dev > 70.0) continue;
        double lateral = c.centroid.x() - cx;
        if ((side == LaneSide::right) != (lateral > 0)) continue;
        if (!dep || c.pixels.size() > dep->pixels.size()) dep = c;
    }
    if (!dep) return std::nullopt;

    double dep_img = wrap180(dep->axis_deg + est_region.orientation_deg);
    double up_dir = alignDirection(dep_img, main_dir);

    // probe from the junction, the cluster pixel closest to the main line
    Eigen::Vector2i root_px = dep->pixels.front();
    for (const auto& p : dep->pixels)
        if (std::fabs(p.x() - cx) < std::fabs(root_px.x() - cx)) root_px = p;
    Eigen::Vector2d root_m = pixelToMeters(
        windowToImage(est_region, root_px.cast<double>()), bev.height(), mpp);

    const double reach = 1.4 * cfg.window_h_m;
    bool up = probeBar(bev, root_m + reach * unitVector(up_dir), up_dir, cfg, 15.0, 0.8).has_value();
    bool down =
        probeBar(bev, root_m - reach * unitVector(up_dir), up_dir, cfg, 15.0, 0.8).has_value();
    if (up == down) return std::nullopt;

    SplitMergeEvent ev;
    ev.position_m = brk;
    ev.split = up;
    ev.side = side;
    return ev;
}

}  // namespace

std::vector<DetectedLine> detectSpecialLines(const GrayImage& bev, double direction_deg,
                                             const LineSpec& spec, const DetectorConfig& cfg) {
    if (bev.meters_per_pixel <= 0) throw Error("detect_special: image has no meters_per_pixel");
    const double mpp = bev.meters_per_pixel;
    const double th = deg2rad(direction_deg - 90.0);
    const double c = std::fabs(std::cos(th)), s = std::fabs(std::sin(th));
    const int bw = static_cast<int>(std::ceil(c * bev.width() + s * bev.height())) + 2;
    const int bh = static_cast<int>(std::ceil(s * bev.width() + c * bev.height())) + 2;
    WindowRegion big{{(bev.width() - 1) / 2.0, (bev.height() - 1) / 2.0}, bw, bh,
                     direction_deg - 90.0};
    GrayImage rot = extractWindow(bev, big);

    GrayImage resp_l = edgeConvolve(rot, EdgeSide::left, cfg.kernel);
    GrayImage resp_r = edgeConvolve(rot, EdgeSide::right, cfg.kernel);
    BinaryImage mask_l = adaptiveThreshold(resp_l, cfg.threshold_percentile, cfg.threshold_floor);
    BinaryImage mask_r = adaptiveThreshold(resp_r, cfg.threshold_percentile, cfg.threshold_floor);
    mask_l = directionalErode(mask_l, 90.0);
    mask_r = directionalErode(mask_r, 90.0);
    // drop responses whose source pixel lies in the rotation padding; the
    // pad-to-background step would otherwise read as a paint edge
    for (BinaryImage* m : {&mask_l, &mask_r})
        for (int y = 0; y < m->height(); ++y)
            for (int x = 0; x < m->width(); ++x) {
                if (!m->test(x, y)) continue;
                Eigen::Vector2d src = windowToImage(big, {static_cast<double>(x),
                                                          static_cast<double>(y)});
                if (src.x() < 2 || src.x() > bev.width() - 3 || src.y() < 2 ||
                    src.y() > bev.height() - 3)
                    m->set(x, y, false);
            }
    BinaryImage mask(rot.width(), rot.height());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask_l.test(x, y) || mask_r.test(x, y)) mask.set(x, y);

    const int block = 16;
    const double half_w_px = 0.5 * cfg.line_width_m / mpp;
    std::vector<DetectedLine> results;
    for (const WindowRegion& region : validBlocks(mask, block, 12)) {
        int x0 = roundHalfUp(region.center.x() - (region.width - 1) / 2.0);
        int y0 = roundHalfUp(region.center.y() - (region.height - 1) / 2.0);
        // best candidate per edge side within this block
        std::optional<LineCandidate> sides[2];
        for (int si = 0; si < 2; ++si) {
            const BinaryImage& m = si == 0 ? mask_l : mask_r;
            const GrayImage& rs = si == 0 ? resp_l : resp_r;
            BinaryImage crop(region.width, region.height);
            GrayImage crop_resp(region.width, region.height, mpp);
            for (int y = 0; y < region.height; ++y)
                for (int x = 0; x < region.width; ++x)
                    if (m.contains(x0 + x, y0 + y)) {
                        crop.set(x, y, m.test(x0 + x, y0 + y));
                        crop_resp.at(x, y) = rs.at(x0 + x, y0 + y);
                    }
            for (const auto& cl : clusterPixels(crop, cfg.cluster_gap)) {
                if (static_cast<int>(cl.pixels.size()) < cfg.min_pixels) continue;
                LineCandidate cand = fitSegment(cl, crop_resp, spec, mpp, cfg.min_pixels);
                if (lineAngleDiff(cand.angle_deg, 90.0) > cfg.turn_limit_deg + 2.0) continue;
                if (cand.length_m < 0.5) continue;
                if (!sides[si] || cand.score > sides[si]->score) sides[si] = std::move(cand);
            }
        }
        if (!sides[0] && !sides[1]) continue;
        if (sides[0] && sides[1]) {
            double sep = std::fabs(xAtRow(*sides[0], (region.height - 1) / 2.0) -
                                   xAtRow(*sides[1], (region.height - 1) / 2.0)) * mpp;
            if (sep > cfg.pair_max_separation_m) {
                if (sides[0]->score >= sides[1]->score)
                    sides[1].reset();
                else
                    sides[0].reset();
            }
        }

        // centerline samples, midway between edges or half a width inside one
        double yb_lo, yb_hi;
        if (sides[0] && sides[1]) {
            yb_lo = std::min(std::max(sides[0]->p0_px.y(), sides[0]->p1_px.y()),
                             std::max(sides[1]->p0_px.y(), sides[1]->p1_px.y()));
            yb_hi = std::max(std::min(sides[0]->p0_px.y(), sides[0]->p1_px.y()),
                             std::min(sides[1]->p0_px.y(), sides[1]->p1_px.y()));
        } else {
            const LineCandidate& c0 = sides[0] ? *sides[0] : *sides[1];
            yb_lo = std::max(c0.p0_px.y(), c0.p1_px.y());
            yb_hi = std::min(c0.p0_px.y(), c0.p1_px.y());
        }
        DetectedLine dl;
        dl.spec = spec;
        dl.termination = Termination::image_edge;
        double mean_resp = ((sides[0] ? sides[0]->mean_response : 0.0) +
                            (sides[1] ? sides[1]->mean_response : 0.0)) /
                           ((sides[0] && sides[1]) ? 2.0 : 1.0);
        dl.confidence = std::min(1.0, mean_resp / 128.0);
        const int k_samples = 5;
        for (int k = 0; k < k_samples; ++k) {
            double y = yb_lo + (yb_hi - yb_lo) * k / (k_samples - 1);
            double x;
            if (sides[0] && sides[1])
                x = 0.5 * (xAtRow(*sides[0], y) + xAtRow(*sides[1], y));
            else if (sides[0])
                x = xAtRow(*sides[0], y) + half_w_px;
            else
                x = xAtRow(*sides[1], y) - half_w_px;
            Eigen::Vector2d img = windowToImage(big, {x + x0, y + y0});
            dl.polyline_m.push_back(pixelToMeters(img, bev.height(), mpp));
        }
        dl.left_length_m = dl.right_length_m = dl.length();
        results.push_back(std::move(dl));
    }

    // merge collinear fragments (dashed marks, block splits)
    const double gap_max = cfg.window_h_m +
        (spec.continuity == LineContinuity::dashed ? cfg.dash_interval_m : 0.0);
    auto dir_of = [](const DetectedLine& d) {
        Eigen::Vector2d v = d.polyline_m.back() - d.polyline_m.front();
        return wrap180(rad2deg(std::atan2(v.y(), v.x())));
    };
    bool merged = true;
    while (merged) {
        merged = false;
        for (size_t i = 0; i < results.size() && !merged; ++i)
            for (size_t j = i + 1; j < results.size() && !merged; ++j) {
                DetectedLine &a = results[i], &b = results[j];
                if (lineAngleDiff(dir_of(a), dir_of(b)) > 10.0) continue;
                // candidate joins: closest pair of opposite ends
                double best_gap = 1e18;
                bool a_front = false, b_front = false;
                for (bool af : {false, true})
                    for (bool bf : {false, true}) {
                        Eigen::Vector2d pa = af ? a.polyline_m.front() : a.polyline_m.back();
                        Eigen::Vector2d pb = bf ? b.polyline_m.front() : b.polyline_m.back();
                        double g = (pa - pb).norm();
                        if (g < best_gap) {
                            best_gap = g;
                            a_front = af;
                            b_front = bf;
                        }
                    }
                if (best_gap > gap_max) continue;
                // lateral offset of b's near end from a's carrier line
                Eigen::Vector2d u = unitVector(dir_of(a));
                Eigen::Vector2d n(-u.y(), u.x());
                Eigen::Vector2d pb = b_front ? b.polyline_m.front() : b.polyline_m.back();
                if (std::fabs((pb - a.polyline_m.front()).dot(n)) > 0.3) continue;
                std::vector<Eigen::Vector2d> joined;
                auto ap = a.polyline_m;
                auto bp = b.polyline_m;
                if (a_front) std::reverse(ap.begin(), ap.end());
                if (!b_front) std::reverse(bp.begin(), bp.end());
                joined = ap;
                joined.insert(joined.end(), bp.begin(), bp.end());
                a.polyline_m = joined;
                a.confidence = std::max(a.confidence, b.confidence);
                a.left_length_m = a.right_length_m = a.length();
                results.erase(results.begin() + static_cast<long>(j));
                merged = true;
            }
    }

    // orient every polyline along the requested direction
    for (auto& d : results) {
        Eigen::Vector2d v = d.polyline_m.back() - d.polyline_m.front();
        if (v.dot(unitVector(direction_deg)) < 0)
            std::reverse(d.polyline_m.begin(), d.polyline_m.end());
    }
    std::sort(results.begin(), results.end(),
              [](const DetectedLine& a, const DetectedLine& b) { return a.length() > b.length(); });
    return results;
}

std::optional<DetectedLine> detectSpecialLine(const GrayImage& bev, double direction_deg,
                                              const LineSpec& spec, const DetectorConfig& cfg) {
    auto all = detectSpecialLines(bev, direction_deg, spec, cfg);
    if (all.empty()) return std::nullopt;
    return all.front();
}

}  // namespace ecp
