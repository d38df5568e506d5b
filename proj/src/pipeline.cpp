#include "ecp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace ecp {

namespace {

// x of a roughly vertical polyline at height y, extrapolated at the ends
double polyXAtY(const std::vector<Eigen::Vector2d>& poly, double y) {
    if (poly.size() < 2) return poly.empty() ? 0.0 : poly.front().x();
    for (size_t i = 1; i < poly.size(); ++i) {
        double y0 = poly[i - 1].y(), y1 = poly[i].y();
        if ((y >= y0 && y <= y1) || (y <= y0 && y >= y1)) {
            double t = std::fabs(y1 - y0) < 1e-9 ? 0.0 : (y - y0) / (y1 - y0);
            return poly[i - 1].x() + t * (poly[i].x() - poly[i - 1].x());
        }
    }
    const Eigen::Vector2d &a = poly.front(), &b = poly.back();
    double t = std::fabs(b.y() - a.y()) < 1e-9 ? 0.0 : (y - a.y()) / (b.y() - a.y());
    return a.x() + t * (b.x() - a.x());
}

double polylineDirection(const std::vector<Eigen::Vector2d>& poly) {
    if (poly.size() < 2) return 90.0;
    Eigen::Vector2d v = poly.back() - poly.front();
    return rad2deg(std::atan2(v.y(), v.x()));
}

// paint statistics sampled along a polyline: (covered fraction, mean value of
// covered samples)
std::pair<double, double> paintStats(const GrayImage& frame,
                                     const std::vector<Eigen::Vector2d>& poly) {
    int covered = 0, total = 0;
    double sum = 0;
    for (size_t i = 1; i < poly.size(); ++i) {
        Eigen::Vector2d a = poly[i - 1], b = poly[i];
        double len = (b - a).norm();
        int steps = std::max(1, static_cast<int>(len / 0.1));
        for (int k = 0; k < steps; ++k) {
            Eigen::Vector2d p = a + (b - a) * (k + 0.5) / steps;
            Eigen::Vector2d px = metersToPixel(p, frame.height(), frame.meters_per_pixel);
            int x = roundHalfUp(px.x()), y = roundHalfUp(px.y());
            if (!frame.contains(x, y)) continue;
            ++total;
            if (frame.at(x, y) >= 100) {
                ++covered;
                sum += frame.at(x, y);
            }
        }
    }
    if (total == 0) return {0.0, 0.0};
    return {static_cast<double>(covered) / total, covered ? sum / covered : 0.0};
}

struct SpecKey {
    int continuity, curb, geometry;
    int interval_cm;
    bool operator<(const SpecKey& o) const {
        return std::tie(continuity, curb, geometry, interval_cm) <
               std::tie(o.continuity, o.curb, o.geometry, o.interval_cm);
    }
};

SpecKey keyOf(const LineSpec& s) {
    return {static_cast<int>(s.continuity), s.is_curb ? 1 : 0, static_cast<int>(s.geometry),
            static_cast<int>(s.dash_interval_m * 100)};
}

// closest point of a polyline to p
Eigen::Vector2d closestOnPolyline(const std::vector<Eigen::Vector2d>& poly,
                                  const Eigen::Vector2d& p) {
    Eigen::Vector2d best = poly.front();
    double best_d = (p - best).squaredNorm();
    for (size_t i = 1; i < poly.size(); ++i) {
        Eigen::Vector2d a = poly[i - 1], d = poly[i] - a;
        double len2 = d.squaredNorm();
        double t = len2 < 1e-12 ? 0.0 : std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
        Eigen::Vector2d q = a + t * d;
        if ((p - q).squaredNorm() < best_d) {
            best_d = (p - q).squaredNorm();
            best = q;
        }
    }
    return best;
}

}  // namespace

Eigen::Vector2d vehicleInFrame(const GrayImage& frame) {
    return pixelToMeters(vehicleAnchorPx(frame.width(), frame.height()), frame.height(),
                         frame.meters_per_pixel);
}

FrameObservation observeCruise(const GrayImage& frame, const DetectableLaneSet& set,
                               const TopologyMap& map, const PipelineConfig& cfg) {
    FrameObservation out;
    const Eigen::Vector2d v = vehicleInFrame(frame);

    std::map<SpecKey, LineSpec> specs;
    for (const auto& lane_id : set.lane_ids)
        for (LaneSide side : {LaneSide::left, LaneSide::right}) {
            LineSpec s = querySideSpec(map, lane_id, side);
            specs.emplace(keyOf(s), s);
        }

    std::vector<DetectedLine> found;
    for (const auto& [key, spec] : specs) {
        DetectorConfig dc = configForSpec(spec, &set);
        dc.kernel = cfg.detector.kernel;
        for (auto& d : detectSpecialLines(frame, 90.0, spec, dc)) found.push_back(std::move(d));
    }
    // dedupe by lateral position, longest first
    std::sort(found.begin(), found.end(),
              [](const DetectedLine& a, const DetectedLine& b) { return a.length() > b.length(); });
    for (auto& d : found) {
        double lat = polyXAtY(d.polyline_m, v.y()) - v.x();
        bool dup = false;
        for (const auto& kept : out.lines)
            if (std::fabs((polyXAtY(kept.polyline_m, v.y()) - v.x()) - lat) < 0.8) dup = true;
        if (dup) continue;

        auto [cover, level] = paintStats(frame, d.polyline_m);
        ObservedLine obs;
        obs.spec.geometry = LineGeometry::straight;
        obs.spec.continuity = cover < 0.75 ? LineContinuity::dashed : LineContinuity::solid;
        obs.spec.is_curb = level >= cfg.curb_brightness;
        obs.lateral_offset_m = lat;
        obs.direction_deg = polylineDirection(d.polyline_m);
        obs.length_m = d.length();
        out.observed.push_back(obs);
        out.lines.push_back(std::move(d));
    }

    // nearest stop bar ahead
    LineSpec bar_spec;
    DetectorConfig bar_cfg = configForSpec(bar_spec, &set);
    bar_cfg.kernel = cfg.detector.kernel;
    for (const auto& d : detectSpecialLines(frame, 0.0, bar_spec, bar_cfg)) {
        if (d.length() < 2.0) continue;
        double y = d.polyline_m.front().y() +
                   (d.polyline_m.back().y() - d.polyline_m.front().y()) * 0.5;
        if (y <= v.y() + 0.5) continue;
        double dist = y - v.y();
        if (!out.stop_distance_m || dist < *out.stop_distance_m) {
            out.stop_distance_m = dist;
            StopLineResult sl;
            sl.found = true;
            sl.a_m = d.polyline_m.front();
            sl.b_m = d.polyline_m.back();
            out.stop = sl;
        }
    }
    if (out.stop) {
        double bar_y = 0.5 * (out.stop->a_m.y() + out.stop->b_m.y());
        for (size_t i = 0; i < out.lines.size(); ++i) {
            double top = std::max(out.lines[i].polyline_m.front().y(),
                                  out.lines[i].polyline_m.back().y());
            if (std::fabs(bar_y - top) < 2.5) out.observed[i].ending = LaneEnding::stop_line;
        }
    }
    return out;
}

std::vector<MatchedFeature> observeTurn(const GrayImage& frame, const FreeSpace& fs,
                                        const Pose2& predicted, const TopologyMap& map,
                                        const PipelineConfig& cfg) {
    const Eigen::Vector2d v = vehicleInFrame(frame);
    const double w_m = frame.width() * frame.meters_per_pixel;
    const double h_m = frame.height() * frame.meters_per_pixel;

    // one whole-image search per (direction, spec type), shared across features
    std::map<std::pair<int, SpecKey>, std::vector<DetectedLine>> cache;

    struct Pick {
        int feature;
        int result;
        std::pair<int, SpecKey> key;
        double dist;
        bool operator<(const Pick& o) const { return dist < o.dist; }
    };
    std::vector<Pick> picks;

    std::vector<std::pair<std::pair<int, SpecKey>, double>> feat_query(fs.features.size(),
                                                                       {{0, {}}, 0.0});
    for (size_t i = 0; i < fs.features.size(); ++i) {
        const FreeSpaceFeature& f = fs.features[i];
        Pose2 q = featureInScene(fs, f);
        Eigen::Vector2d p_v = predicted.toLocal(q.position());
        double dir_v = wrap360(q.heading_deg - predicted.heading_deg);
        Eigen::Vector2d p_f = v + p_v;
        if (p_f.x() < -2 || p_f.x() > w_m + 2 || p_f.y() < -2 || p_f.y() > h_m + 2) continue;

        LineSpec spec;  // solid straight by default
        const DetectableLaneSet* set = nullptr;
        if (const Lane* lane = map.findLane(f.lane_id)) {
            set = map.findDetectableSet(lane->detectable_set_id);
            if (f.kind == FeatureKind::lane_line) {
                if (lane->left && lane->left->continuity == LineContinuity::dashed)
                    spec = *lane->left;
                else if (lane->right && lane->right->continuity == LineContinuity::dashed)
                    spec = *lane->right;
            } else if (f.kind == FeatureKind::curb) {
                spec.is_curb = true;
            }
        }
        spec.expected_direction_deg = 0.0;

        auto key = std::make_pair(roundHalfUp(wrap180(dir_v) * 2.0), keyOf(spec));
        if (!cache.count(key)) {
            DetectorConfig dc = configForSpec(spec, set);
            dc.kernel = cfg.detector.kernel;
            cache[key] = detectSpecialLines(frame, dir_v, spec, dc);
        }
        feat_query[i] = {key, dir_v};
        const auto& results = cache[key];
        for (size_t r = 0; r < results.size(); ++r) {
            const auto& poly = results[r].polyline_m;
            if (lineAngleDiff(polylineDirection(poly), dir_v) > 15.0) continue;
            Eigen::Vector2d cp = closestOnPolyline(poly, p_f);
            // perpendicular distance to the carrier line
            Eigen::Vector2d u = unitVector(polylineDirection(poly));
            Eigen::Vector2d n(-u.y(), u.x());
            double perp = std::fabs((p_f - poly.front()).dot(n));
            if (perp > 1.2) continue;
            (void)cp;
            picks.push_back({static_cast<int>(i), static_cast<int>(r), key, perp});
        }
    }

    std::stable_sort(picks.begin(), picks.end());
    std::vector<char> feat_used(fs.features.size(), 0);
    std::map<std::pair<std::pair<int, SpecKey>, int>, char> result_used;
    std::vector<MatchedFeature> out;
    for (const auto& p : picks) {
        if (feat_used[static_cast<size_t>(p.feature)]) continue;
        if (result_used.count({p.key, p.result})) continue;
        feat_used[static_cast<size_t>(p.feature)] = 1;
        result_used[{p.key, p.result}] = 1;

        const FreeSpaceFeature& f = fs.features[static_cast<size_t>(p.feature)];
        const DetectedLine& d = cache[p.key][static_cast<size_t>(p.result)];
        Pose2 q = featureInScene(fs, f);
        Eigen::Vector2d p_f = v + predicted.toLocal(q.position());

        MatchedFeature m;
        m.kind = f.kind;
        m.feature_index = p.feature;
        m.is_line = true;
        m.point_v = closestOnPolyline(d.polyline_m, p_f) - v;
        double dir = polylineDirection(d.polyline_m);
        // line directions are mod 180; keep the representative near the prediction
        if (angleDiff(dir, feat_query[static_cast<size_t>(p.feature)].second) > 90.0) dir += 180.0;
        m.direction_deg = wrap360(dir);
        out.push_back(m);
    }
    return out;
}

std::vector<FrameStateRecord> runLocalize(const TopologyMap& map,
                                          const std::vector<GrayImage>& frames,
                                          const std::string& set_id, int lane_number,
                                          const std::string& free_space_id,
                                          const std::string& target_lane_id,
                                          const PipelineConfig& cfg) {
    VehicleState state = initState(map, set_id, lane_number);
    state.free_space_id = free_space_id;
    state.target_lane_id = target_lane_id;

    std::vector<FrameStateRecord> records;
    for (size_t f = 0; f < frames.size(); ++f) {
        const GrayImage& frame = frames[f];
        int anchors_used = 0;
        if (state.mode == Mode::cruising) {
            const DetectableLaneSet* set = map.findDetectableSet(state.detectable_set_id);
            if (!set) throw Error("localize: unknown detectable set " + state.detectable_set_id);
            FrameObservation obs = observeCruise(frame, *set, map, cfg);
            state = updateCruise(state, obs.observed, map);

            if (state.lane_ending && obs.stop_distance_m &&
                *obs.stop_distance_m < cfg.stop_gate_m && !free_space_id.empty() &&
                !state.target_lane_id.empty()) {
                const FreeSpace* fs = map.findFreeSpace(free_space_id);
                if (!fs) throw Error("localize: unknown free space " + free_space_id);
                state.mode = Mode::turning;
                state.phase = TurnPhase::exiting_lane;
                // seed the scene pose from the ego stop line we are approaching
                const std::string ego_lane =
                    set->lane_ids[static_cast<size_t>(state.lane_number - 1)];
                for (const auto& feat : fs->features) {
                    if (feat.kind != FeatureKind::stop_line || feat.lane_id != ego_lane) continue;
                    Pose2 q = featureInScene(*fs, feat);
                    Eigen::Vector2d pos = q.position() -
                                          *obs.stop_distance_m * unitVector(q.heading_deg + 90.0);
                    state.pose = Pose2{pos.x(), pos.y(), q.heading_deg};
                    break;
                }
            }
        } else {
            const FreeSpace* fs = map.findFreeSpace(state.free_space_id);
            if (!fs) throw Error("localize: unknown free space " + state.free_space_id);
            Pose2 pred = state.pose ? *state.pose : Pose2{};
            if (state.pose && state.last_delta) pred = state.pose->compose(*state.last_delta);

            TurnInput input;
            input.features = observeTurn(frame, *fs, pred, map, cfg);
            anchors_used = static_cast<int>(buildAnchors(input.features, *fs).size());

            if (state.phase == TurnPhase::entering_target) {
                if (const Lane* target = map.findLane(state.target_lane_id)) {
                    const DetectableLaneSet* tset =
                        map.findDetectableSet(target->detectable_set_id);
                    if (tset) {
                        FrameObservation obs = observeCruise(frame, *tset, map, cfg);
                        auto [w, rule] = resolveLaneWidth(obs.observed, *tset, state);
                        (void)w;
                        input.target_set_detected = rule == 1;
                        input.target_lane_number = map.laneNumber(target->id);
                    }
                }
            }
            state = stepFreeSpace(state, input, map);
        }
        records.push_back({static_cast<long>(f), state, anchors_used});
    }
    return records;
}

nlohmann::json lineToJson(const DetectedLine& line) {
    nlohmann::json j;
    j["type"] = {{"geometry", toString(line.spec.geometry)},
                 {"continuity", toString(line.spec.continuity)},
                 {"is_curb", line.spec.is_curb}};
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& p : line.polyline_m) poly.push_back({p.x(), p.y()});
    j["polyline"] = poly;
    j["termination"] = toString(line.termination);
    j["confidence"] = line.confidence;
    j["left_length"] = line.left_length_m;
    j["right_length"] = line.right_length_m;
    if (line.stop_line && line.stop_line->found)
        j["stop_line"] = {{"a", {line.stop_line->a_m.x(), line.stop_line->a_m.y()}},
                          {"b", {line.stop_line->b_m.x(), line.stop_line->b_m.y()}}};
    if (line.event)
        j["event"] = {{"kind", line.event->split ? "split" : "merge"},
                      {"side", line.event->side == LaneSide::left ? "left" : "right"},
                      {"position", {line.event->position_m.x(), line.event->position_m.y()}}};
    return j;
}

nlohmann::json detectRecord(const std::string& frame_name,
                            const std::vector<DetectedLine>& lines) {
    nlohmann::json j;
    j["frame"] = frame_name;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : lines) arr.push_back(lineToJson(l));
    j["lines"] = arr;
    return j;
}

nlohmann::json stateRecord(const FrameStateRecord& rec) {
    const VehicleState& s = rec.state;
    nlohmann::json j;
    j["frame"] = rec.frame;
    j["mode"] = toString(s.mode);
    if (s.mode == Mode::turning) j["phase"] = toString(s.phase);
    j["set"] = s.detectable_set_id;
    j["lane"] = s.lane_number;
    if (s.pose) j["pose"] = {s.pose->x, s.pose->y, s.pose->heading_deg};
    j["lane_width"] = s.lane_width_m;
    j["lane_width_rule"] = s.lane_width_rule;
    j["anchors"] = rec.anchors_used;
    j["degraded"] = s.degraded;
    return j;
}

namespace {

void drawPolylinePx(RgbImage& img, const std::vector<Eigen::Vector2d>& poly_m, double mpp,
                    std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (size_t i = 1; i < poly_m.size(); ++i) {
        Eigen::Vector2d a = metersToPixel(poly_m[i - 1], img.height(), mpp);
        Eigen::Vector2d d = metersToPixel(poly_m[i], img.height(), mpp) - a;
        int steps = std::max(1, static_cast<int>(std::ceil(d.norm())));
        for (int k = 0; k <= steps; ++k) {
            Eigen::Vector2d p = a + d * k / steps;
            int x = roundHalfUp(p.x()), y = roundHalfUp(p.y());
            for (int dy = 0; dy <= 0; ++dy)
                if (x >= 0 && x < img.width() && y >= 0 && y < img.height()) {
                    img.r(y, x) = r;
                    img.g(y, x) = g;
                    img.b(y, x) = b;
                }
        }
    }
}

}  // namespace

RgbImage renderOverlay(const GrayImage& bev, const std::vector<DetectedLine>& lines,
                       const std::vector<std::vector<Eigen::Vector2d>>& guides) {
    RgbImage out(bev.width(), bev.height());
    out.r = bev.data;
    out.g = bev.data;
    out.b = bev.data;
    const double mpp = bev.meters_per_pixel;
    for (const auto& l : lines) {
        drawPolylinePx(out, l.polyline_m, mpp, 255, 0, 0);
        if (l.stop_line && l.stop_line->found)
            drawPolylinePx(out, {l.stop_line->a_m, l.stop_line->b_m}, mpp, 0, 0, 255);
    }
    for (const auto& g : guides) drawPolylinePx(out, g, mpp, 0, 255, 0);
    return out;
}

}  // namespace ecp
