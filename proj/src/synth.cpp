#include "ecp/synth.hpp"

#include <algorithm>
#include <fstream>

#include "ecp/imageproc.hpp"

namespace ecp {

using nlohmann::json;

void drawSegmentMeters(GrayImage& img, const Eigen::Vector2d& a_m, const Eigen::Vector2d& b_m,
                       double width_m, double brightness) {
    const double mpp = img.meters_per_pixel;
    Eigen::Vector2d a = metersToPixel(a_m, img.height(), mpp);
    Eigen::Vector2d b = metersToPixel(b_m, img.height(), mpp);
    const double half_w = width_m / mpp / 2.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - half_w - 2)));
    const int x1 = std::min(img.width() - 1,
                            static_cast<int>(std::ceil(std::max(a.x(), b.x()) + half_w + 2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - half_w - 2)));
    const int y1 = std::min(img.height() - 1,
                            static_cast<int>(std::ceil(std::max(a.y(), b.y()) + half_w + 2)));
    const Eigen::Vector2d d = b - a;
    const double len2 = d.squaredNorm();
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            Eigen::Vector2d p(x, y);
            double t = len2 > 0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
            double dist = (p - (a + t * d)).norm();
            double cov = std::clamp(half_w + 0.5 - dist, 0.0, 1.0);
            if (cov <= 0) continue;
            int v = roundHalfUp(cov * brightness);
            img.at(x, y) = static_cast<std::uint8_t>(
                std::max<int>(img.at(x, y), std::clamp(v, 0, 255)));
        }
}

namespace {

double lineX(const LineLayout& l, double y) {
    return l.x0_m + l.slope * y + l.curvature * y * y;
}

void applyNoise(GrayImage& img, const NoiseProfile& noise, SynthRng& rng) {
    const double mpp = img.meters_per_pixel;
    for (int b = 0; b < noise.shadow_bands; ++b) {
        int band_h = std::max(1, roundHalfUp(rng.uniform(0.5, 1.5) / mpp));
        int y0 = rng.nextInt(std::max(1, img.height() - band_h));
        double factor = rng.uniform(0.35, 0.6);
        for (int y = y0; y < std::min(img.height(), y0 + band_h); ++y)
            for (int x = 0; x < img.width(); ++x)
                img.at(x, y) = static_cast<std::uint8_t>(roundHalfUp(img.at(x, y) * factor));
    }
    for (int o = 0; o < noise.occluders; ++o) {
        int ow = std::max(2, roundHalfUp(rng.uniform(0.4, 1.2) / mpp));
        int oh = std::max(2, roundHalfUp(rng.uniform(0.4, 1.2) / mpp));
        int x0 = rng.nextInt(std::max(1, img.width() - ow));
        int y0 = rng.nextInt(std::max(1, img.height() - oh));
        int value = 60 + rng.nextInt(60);
        for (int y = y0; y < std::min(img.height(), y0 + oh); ++y)
            for (int x = x0; x < std::min(img.width(), x0 + ow); ++x)
                img.at(x, y) = static_cast<std::uint8_t>(value);
    }
    if (noise.speckle_density > 0) {
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                if (rng.nextDouble() < noise.speckle_density)
                    img.at(x, y) = static_cast<std::uint8_t>(80 + rng.nextInt(176));
    }
    for (int pass = 0; pass < noise.blur_passes; ++pass) {
        MatU8 src = img.data;
        for (int y = 1; y < img.height() - 1; ++y)
            for (int x = 1; x < img.width() - 1; ++x) {
                int acc = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) acc += src(y + dy, x + dx);
                img.at(x, y) = static_cast<std::uint8_t>(roundHalfUp(acc / 9.0));
            }
    }
}

}  // namespace

Scene genScene(const SceneSpec& spec) {
    const double mpp = spec.meters_per_pixel;
    const int w = roundHalfUp(spec.width_m / mpp);
    const int h = roundHalfUp(spec.height_m / mpp);
    Scene scene;
    scene.image = GrayImage(w, h, mpp);
    scene.image.data.setConstant(static_cast<std::uint8_t>(spec.background));

    // reject overlapping layouts before any drawing
    for (size_t i = 0; i < spec.lines.size(); ++i)
        for (size_t j = i + 1; j < spec.lines.size(); ++j)
            for (double y = 0; y <= spec.height_m; y += 0.5) {
                double yi_end = spec.lines[i].y_end_m < 0 ? spec.height_m : spec.lines[i].y_end_m;
                double yj_end = spec.lines[j].y_end_m < 0 ? spec.height_m : spec.lines[j].y_end_m;
                if (y < spec.lines[i].y_start_m || y > yi_end) continue;
                if (y < spec.lines[j].y_start_m || y > yj_end) continue;
                if (std::fabs(lineX(spec.lines[i], y) - lineX(spec.lines[j], y)) <
                    spec.line_width_m)
                    throw Error("gen_scene: overlapping lane lines in layout");
            }

    SynthRng rng(spec.seed);
    const double step = 0.1;
    for (const auto& line : spec.lines) {
        const double y_end = line.y_end_m < 0 ? spec.height_m : line.y_end_m;
        std::vector<std::pair<double, double>> marks;
        if (line.spec.continuity == LineContinuity::dashed) {
            double seg = line.spec.dash_segment_length_m;
            double gap = line.spec.dash_interval_m - seg;
            if (seg <= 0 || gap < 0) throw Error("gen_scene: bad dash spec");
            for (double y = line.y_start_m; y < y_end; y += seg + gap)
                marks.emplace_back(y, std::min(y + seg, y_end));
        } else {
            marks.emplace_back(line.y_start_m, y_end);
        }
        for (const auto& [m0, m1] : marks)
            for (double y = m0; y < m1; y += step) {
                double y2 = std::min(y + step, m1);
                drawSegmentMeters(scene.image, {lineX(line, y), y}, {lineX(line, y2), y2},
                                  spec.line_width_m, line.brightness);
            }
        std::vector<Eigen::Vector2d> poly;
        for (double y = line.y_start_m; y <= y_end + 1e-9; y += 0.25)
            poly.emplace_back(lineX(line, y), std::min(y, y_end));
        scene.truth.polylines.push_back(std::move(poly));
        scene.truth.dash_marks.push_back(std::move(marks));
    }

    if (spec.branch) {
        if (spec.lines.empty()) throw Error("gen_scene: branch needs a main line");
        const auto& b = *spec.branch;
        const auto& main = spec.lines[0];
        const double xb = lineX(main, b.y_branch_m);
        double main_dir = rad2deg(std::atan2(1.0, main.slope + 2 * main.curvature * b.y_branch_m));
        double dep = b.side == LaneSide::right ? -b.departure_deg : b.departure_deg;
        // splits diverge ahead of the branch point, merges come in from behind,
        // on the same lateral side
        double branch_dir = b.split ? main_dir + dep : main_dir - dep + 180.0;
        Eigen::Vector2d u = unitVector(branch_dir);
        Eigen::Vector2d start(xb, b.y_branch_m);
        // the first stretch is a filled wedge between the main line and the
        // branch, so the departing side has a single diverging paint edge
        const double wedge_len = std::min(2.0, b.length_m);
        const double wedge_t = wedge_len / std::max(0.2, std::fabs(u.y()));
        for (double t = 0.0; t < wedge_t; t += step) {
            Eigen::Vector2d p = start + t * u;
            drawSegmentMeters(scene.image, {lineX(main, p.y()), p.y()}, p, spec.line_width_m,
                              main.brightness);
        }
        for (double t = wedge_t; t < b.length_m; t += step) {
            double t2 = std::min(t + step, b.length_m);
            drawSegmentMeters(scene.image, start + t * u, start + t2 * u, spec.line_width_m,
                              main.brightness);
        }
        scene.truth.events.push_back({start, b.split, b.side});
    }

    for (const auto& sl : spec.stop_lines) {
        Eigen::Vector2d a(sl.x_start_m, sl.y_m), b(sl.x_end_m, sl.y_m);
        drawSegmentMeters(scene.image, a, b, spec.line_width_m * 1.5, sl.brightness);
        scene.truth.stop_lines.emplace_back(a, b);
    }

    applyNoise(scene.image, spec.noise, rng);
    return scene;
}

Eigen::Vector2d vehicleAnchorPx(int frame_width_px, int frame_height_px) {
    return {(frame_width_px - 1) / 2.0, frame_height_px * 0.9};
}

std::vector<GrayImage> genSequence(const Scene& scene, const std::vector<Pose2>& motion,
                                   int frame_width_px, int frame_height_px) {
    const double mpp = scene.image.meters_per_pixel;
    std::vector<GrayImage> frames;
    frames.reserve(motion.size());
    const Eigen::Vector2d anchor = vehicleAnchorPx(frame_width_px, frame_height_px);
    for (const auto& pose : motion) {
        if (pose.x < 0 || pose.y < 0 || pose.x * 1.0 / mpp >= scene.image.width() ||
            pose.y / mpp >= scene.image.height())
            throw Error("gen_sequence: path exits the scene");
        WindowRegion region;
        region.width = frame_width_px;
        region.height = frame_height_px;
        region.orientation_deg = pose.heading_deg - 90.0;
        Eigen::Vector2d veh_px = metersToPixel({pose.x, pose.y}, scene.image.height(), mpp);
        // place the window so the anchor pixel lands on the vehicle
        double hw = (frame_width_px - 1) / 2.0, hh = (frame_height_px - 1) / 2.0;
        Eigen::Vector2d d_up(anchor.x() - hw, -(anchor.y() - hh));
        Eigen::Vector2d v = Eigen::Rotation2Dd(deg2rad(region.orientation_deg)) * d_up;
        region.center = {veh_px.x() - v.x(), veh_px.y() + v.y()};
        GrayImage frame = extractWindow(scene.image, region);
        frame.meters_per_pixel = mpp;
        frames.push_back(std::move(frame));
    }
    return frames;
}

void writeManifest(const std::string& path, const FrameManifest& manifest) {
    json j;
    j["frames"] = manifest.frame_paths;
    j["true_poses"] = json::array();
    for (const auto& p : manifest.true_poses)
        j["true_poses"].push_back(json::array({p.x, p.y, p.heading_deg}));
    j["meters_per_pixel"] = manifest.meters_per_pixel;
    j["frame_size"] = json::array({manifest.frame_width_px, manifest.frame_height_px});
    j["map"] = manifest.map_path;
    j["hint"] = {{"detectable_set", manifest.detectable_set_id}, {"lane", manifest.initial_lane}};
    if (!manifest.free_space_id.empty()) j["hint"]["free_space"] = manifest.free_space_id;
    if (!manifest.target_lane_id.empty()) j["hint"]["target_lane"] = manifest.target_lane_id;
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

FrameManifest readManifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw Error(std::string("manifest parse error: ") + e.what());
    }
    FrameManifest m;
    m.frame_paths = j.at("frames").get<std::vector<std::string>>();
    for (const auto& jp : j.value("true_poses", json::array()))
        m.true_poses.push_back({jp.at(0).get<double>(), jp.at(1).get<double>(),
                                jp.at(2).get<double>()});
    m.meters_per_pixel = j.at("meters_per_pixel").get<double>();
    m.frame_width_px = j.at("frame_size").at(0).get<int>();
    m.frame_height_px = j.at("frame_size").at(1).get<int>();
    m.map_path = j.value("map", "");
    if (j.contains("hint")) {
        m.detectable_set_id = j["hint"].value("detectable_set", "");
        m.initial_lane = j["hint"].value("lane", 1);
        m.free_space_id = j["hint"].value("free_space", "");
        m.target_lane_id = j["hint"].value("target_lane", "");
    }
    return m;
}

IntersectionScenario buildIntersectionScenario(std::uint64_t seed, int n_frames) {
    IntersectionScenario sc;
    const double mpp = 0.05;

    // world: 40 m x 45 m; northbound two-lane road on the left, eastbound
    // single-direction road on the upper right, one free space between them
    SceneSpec spec;
    spec.seed = seed;
    spec.width_m = 40.0;
    spec.height_m = 45.0;
    spec.meters_per_pixel = mpp;

    auto solid = [](double x0) {
        LineLayout l;
        l.x0_m = x0;
        l.spec.continuity = LineContinuity::solid;
        return l;
    };
    LineLayout left_b = solid(1.75);
    left_b.y_end_m = 30.0;
    LineLayout mid = solid(3.5 + 1.75);
    mid.spec.continuity = LineContinuity::dashed;
    mid.spec.dash_segment_length_m = 3.0;
    mid.spec.dash_interval_m = 6.0;
    mid.y_end_m = 30.0;
    LineLayout curb = solid(7.0 + 1.75);
    curb.spec.is_curb = true;
    curb.y_end_m = 30.0;
    spec.lines = {mid, left_b, curb};

    StopLineLayout ego_stop;
    ego_stop.y_m = 30.0;
    ego_stop.x_start_m = 1.75;
    ego_stop.x_end_m = 8.75;
    spec.stop_lines = {ego_stop};

    Scene world = genScene(spec);

    // eastbound target road drawn directly into the world image:
    // lane between y=31 (curb) and y=34.5 (dashed divider), second lane above
    const double road_x0 = 14.0;
    auto drawH = [&](double y, bool dashed) {
        if (!dashed) {
            drawSegmentMeters(world.image, {road_x0, y}, {40.0, y}, 0.12, 200);
            return;
        }
        for (double x = road_x0; x < 40.0; x += 6.0)
            drawSegmentMeters(world.image, {x, y}, {std::min(x + 3.0, 40.0), y}, 0.12, 200);
    };
    drawH(31.0, false);   // curb, right of eastbound travel
    drawH(34.5, true);    // divider
    drawH(38.0, false);   // far boundary
    // target road's own stop line facing the intersection
    drawSegmentMeters(world.image, {road_x0, 31.0}, {road_x0, 38.0}, 0.18, 200);

    sc.scene = std::move(world);

    // topology map, free-space frame = world frame
    TopologyMap map;
    auto mkSpec = [](LineContinuity c, bool curb_flag) {
        LineSpec s;
        s.continuity = c;
        s.is_curb = curb_flag;
        if (c == LineContinuity::dashed) {
            s.dash_segment_length_m = 3.0;
            s.dash_interval_m = 6.0;
        }
        return s;
    };
    DetectableLaneSet ns;
    ns.id = "DS_NS";
    ns.lane_ids = {"L1", "L2"};
    ns.default_lane_width_m = 3.5;
    ns.left_boundary = mkSpec(LineContinuity::solid, false);
    ns.right_boundary = mkSpec(LineContinuity::solid, true);
    ns.dash_interval_m = 6.0;
    map.detectable_sets.push_back(ns);
    DetectableLaneSet ew = ns;
    ew.id = "DS_EW";
    ew.lane_ids = {"T1", "T2"};
    map.detectable_sets.push_back(ew);

    DrivingLaneSet drn{"DR_NS", {"L1", "L2"}, {}, json::object()};
    DrivingLaneSet dre{"DR_EW", {"T1", "T2"}, {}, json::object()};
    map.driving_sets = {drn, dre};

    auto mkLane = [&](const std::string& id, const std::string& ds, const std::string& dr,
                      double start_dir_compass) {
        Lane l;
        l.id = id;
        l.detectable_set_id = ds;
        l.driving_set_id = dr;
        l.start_direction_deg = start_dir_compass;
        l.ending = LaneEnding::stop_line;
        return l;
    };
    Lane l1 = mkLane("L1", "DS_NS", "DR_NS", 0.0);
    l1.left = mkSpec(LineContinuity::dashed, false);
    l1.exit_ids = {"X_E"};
    Lane l2 = mkLane("L2", "DS_NS", "DR_NS", 0.0);
    l2.right = mkSpec(LineContinuity::dashed, false);
    Lane t1 = mkLane("T1", "DS_EW", "DR_EW", 90.0);
    t1.left = mkSpec(LineContinuity::dashed, false);
    t1.entrance_ids = {"E_T"};
    Lane t2 = mkLane("T2", "DS_EW", "DR_EW", 90.0);
    t2.right = mkSpec(LineContinuity::dashed, false);
    map.lanes = {l1, l2, t1, t2};

    auto toLatLon = [](double x, double y) {
        double lat = 48.0 + y / 111194.9;
        double lon = 11.0 + x / (111194.9 * std::cos(deg2rad(48.0)));
        return std::make_pair(lat, lon);
    };
    auto [lat_x, lon_x] = toLatLon(7.0, 30.0);
    auto [lat_e, lon_e] = toLatLon(road_x0, 32.75);
    map.points.push_back({"X_E", PointKind::exit, lat_x, lon_x, 0.0});
    map.points.push_back({"E_T", PointKind::entry, lat_e, lon_e, 90.0});

    FreeSpace fs;
    fs.id = "FS1";
    fs.entry_ids = {"E_T"};
    fs.exit_ids = {"X_E"};
    // poses in the world frame: (x, y, direction of the line, math degrees)
    fs.features.push_back({FeatureKind::stop_line, {7.0, 30.0, 0.0}, "L1"});
    fs.features.push_back({FeatureKind::lane_line, {5.25, 25.0, 90.0}, "L1"});
    fs.features.push_back({FeatureKind::stop_line, {road_x0, 34.5, 90.0}, "T1"});
    fs.features.push_back({FeatureKind::curb, {25.0, 31.0, 0.0}, "T1"});
    fs.features.push_back({FeatureKind::lane_line, {25.0, 34.5, 0.0}, "T1"});
    map.free_spaces.push_back(fs);
    map.legal_pairs.insert({"E_T", "X_E"});
    sc.map = std::move(map);
    sc.target_entrance_lane = "T1";

    // motion: straight north in lane 1, quarter arc to the right, then east
    const Pose2 start{7.0, 8.0, 90.0};
    const double cruise_end_y = 26.0;
    const double radius = 6.75;
    std::vector<Pose2>& motion = sc.motion;
    int n1 = n_frames * 3 / 10, n2 = n_frames * 4 / 10, n3 = n_frames - n1 - n2;
    for (int i = 0; i < n1; ++i) {
        double y = start.y + (cruise_end_y - start.y) * i / std::max(1, n1 - 1);
        motion.push_back({start.x, y, 90.0});
    }
    const Eigen::Vector2d arc_center(start.x + radius, cruise_end_y);
    for (int i = 0; i < n2; ++i) {
        double a = 180.0 - 90.0 * i / std::max(1, n2 - 1);  // 180 -> 90 around the center
        Eigen::Vector2d p = arc_center + radius * unitVector(a);
        motion.push_back({p.x(), p.y(), wrap360(a - 90.0)});
    }
    const double east_y = cruise_end_y + radius;  // 32.75, lane T1 center
    for (int i = 0; i < n3; ++i) {
        double x = start.x + radius + (30.0 - start.x - radius) * i / std::max(1, n3 - 1);
        motion.push_back({x, east_y, 0.0});
    }
    return sc;
}

}  // namespace ecp
