#include "ecp/topomap.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "ecp/imageproc.hpp"  // ecp::Error

namespace ecp {

using nlohmann::json;

namespace {

template <typename Enum>
Enum fromName(const std::map<std::string, Enum>& names, const std::string& s,
              const std::string& what) {
    auto it = names.find(s);
    if (it == names.end()) throw Error("unknown " + what + ": '" + s + "'");
    return it->second;
}

const std::map<std::string, LineGeometry> kGeometryNames{{"straight", LineGeometry::straight},
                                                         {"curved", LineGeometry::curved}};
const std::map<std::string, LineContinuity> kContinuityNames{{"solid", LineContinuity::solid},
                                                             {"dashed", LineContinuity::dashed}};
const std::map<std::string, LaneEnding> kEndingNames{{"stop_line", LaneEnding::stop_line},
                                                     {"merges_left", LaneEnding::merges_left},
                                                     {"merges_right", LaneEnding::merges_right},
                                                     {"splits", LaneEnding::splits},
                                                     {"open", LaneEnding::open}};
const std::map<std::string, ElementStatus> kStatusNames{{"normal", ElementStatus::normal},
                                                        {"maintenance", ElementStatus::maintenance},
                                                        {"closed", ElementStatus::closed}};
const std::map<std::string, PointKind> kPointKindNames{{"entry", PointKind::entry},
                                                       {"exit", PointKind::exit}};
const std::map<std::string, FeatureKind> kFeatureKindNames{
    {"stop_line", FeatureKind::stop_line}, {"crosswalk", FeatureKind::crosswalk},
    {"lane_line", FeatureKind::lane_line}, {"curb", FeatureKind::curb},
    {"sign", FeatureKind::sign},           {"light", FeatureKind::light}};

LineSpec parseLineSpec(const json& j) {
    LineSpec s;
    s.geometry = fromName(kGeometryNames, j.at("geometry").get<std::string>(), "geometry");
    s.continuity = fromName(kContinuityNames, j.at("continuity").get<std::string>(), "continuity");
    s.is_curb = j.value("is_curb", false);
    s.dash_segment_length_m = j.value("dash_segment_length", 0.0);
    s.dash_interval_m = j.value("dash_interval", 0.0);
    if (j.contains("color_hint")) s.color_hint = j.at("color_hint").get<std::string>();
    s.expected_direction_deg = j.value("expected_direction", 0.0);
    return s;
}

json dumpLineSpec(const LineSpec& s) {
    json j{{"geometry", toString(s.geometry)}, {"continuity", toString(s.continuity)}};
    if (s.is_curb) j["is_curb"] = true;
    if (s.continuity == LineContinuity::dashed) {
        j["dash_segment_length"] = s.dash_segment_length_m;
        j["dash_interval"] = s.dash_interval_m;
    }
    if (s.color_hint) j["color_hint"] = *s.color_hint;
    j["expected_direction"] = s.expected_direction_deg;
    return j;
}

bool validIsoInterval(const std::string& s) {
    static const std::regex iso(
        R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(Z|[+-]\d{2}:\d{2})?/)"
        R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(Z|[+-]\d{2}:\d{2})?)");
    return std::regex_match(s, iso);
}

}  // namespace

std::string toString(LineGeometry g) { return g == LineGeometry::straight ? "straight" : "curved"; }
std::string toString(LineContinuity c) { return c == LineContinuity::solid ? "solid" : "dashed"; }
std::string toString(LaneEnding e) {
    switch (e) {
        case LaneEnding::stop_line: return "stop_line";
        case LaneEnding::merges_left: return "merges_left";
        case LaneEnding::merges_right: return "merges_right";
        case LaneEnding::splits: return "splits";
        case LaneEnding::open: return "open";
    }
    return "open";
}
std::string toString(ElementStatus s) {
    switch (s) {
        case ElementStatus::normal: return "normal";
        case ElementStatus::maintenance: return "maintenance";
        case ElementStatus::closed: return "closed";
    }
    return "normal";
}
std::string toString(PointKind k) { return k == PointKind::entry ? "entry" : "exit"; }
std::string toString(FeatureKind k) {
    switch (k) {
        case FeatureKind::stop_line: return "stop_line";
        case FeatureKind::crosswalk: return "crosswalk";
        case FeatureKind::lane_line: return "lane_line";
        case FeatureKind::curb: return "curb";
        case FeatureKind::sign: return "sign";
        case FeatureKind::light: return "light";
    }
    return "lane_line";
}

int detectorLevel(const LineSpec& spec) {
    const bool dashed = spec.continuity == LineContinuity::dashed;
    const bool curved = spec.geometry == LineGeometry::curved;
    if (curved) return dashed ? 1 : 2;
    return dashed ? 3 : 4;
}

int minDetectorLevel(const std::vector<LineSpec>& specs) {
    int level = 4;
    for (const auto& s : specs) level = std::min(level, detectorLevel(s));
    return level;
}

const Lane* TopologyMap::findLane(const std::string& id) const {
    for (const auto& l : lanes)
        if (l.id == id) return &l;
    return nullptr;
}
const DetectableLaneSet* TopologyMap::findDetectableSet(const std::string& id) const {
    for (const auto& s : detectable_sets)
        if (s.id == id) return &s;
    return nullptr;
}
const DrivingLaneSet* TopologyMap::findDrivingSet(const std::string& id) const {
    for (const auto& s : driving_sets)
        if (s.id == id) return &s;
    return nullptr;
}
const MapPoint* TopologyMap::findPoint(const std::string& id) const {
    for (const auto& p : points)
        if (p.id == id) return &p;
    return nullptr;
}
const FreeSpace* TopologyMap::findFreeSpace(const std::string& id) const {
    for (const auto& f : free_spaces)
        if (f.id == id) return &f;
    return nullptr;
}

int TopologyMap::laneNumber(const std::string& lane_id) const {
    const Lane* lane = findLane(lane_id);
    if (!lane) throw Error("unknown lane id: '" + lane_id + "'");
    const DetectableLaneSet* set = findDetectableSet(lane->detectable_set_id);
    if (!set) throw Error("lane '" + lane_id + "' references missing set");
    auto it = std::find(set->lane_ids.begin(), set->lane_ids.end(), lane_id);
    if (it == set->lane_ids.end())
        throw Error("lane '" + lane_id + "' not listed in its detectable set");
    return static_cast<int>(it - set->lane_ids.begin()) + 1;
}

TopologyMap loadMap(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(std::string("map parse error: ") + e.what());
    }
    TopologyMap map;
    try {
        map.version = j.value("version", 1);
        for (const auto& jl : j.value("lanes", json::array())) {
            Lane l;
            l.id = jl.at("id").get<std::string>();
            l.detectable_set_id = jl.at("detectable_set").get<std::string>();
            l.driving_set_id = jl.at("driving_set").get<std::string>();
            if (jl.contains("left")) l.left = parseLineSpec(jl.at("left"));
            if (jl.contains("right")) l.right = parseLineSpec(jl.at("right"));
            l.ending = fromName(kEndingNames, jl.value("ending", "open"), "lane ending");
            l.start_direction_deg = jl.value("start_direction", 0.0);
            l.per_window_turn_limit_deg = jl.value("per_window_turn_limit", 5.0);
            l.neighbor_ids = jl.value("neighbors", std::vector<std::string>{});
            l.entrance_ids = jl.value("entrance_ids", std::vector<std::string>{});
            l.exit_ids = jl.value("exit_ids", std::vector<std::string>{});
            l.rules = jl.value("rules", json::object());
            l.status = fromName(kStatusNames, jl.value("status", "normal"), "status");
            if (jl.contains("status_window"))
                l.status_window = jl.at("status_window").get<std::string>();
            map.lanes.push_back(std::move(l));
        }
        for (const auto& js : j.value("driving_sets", json::array())) {
            DrivingLaneSet s;
            s.id = js.at("id").get<std::string>();
            s.lane_ids = js.value("lane_ids", std::vector<std::string>{});
            for (const auto& r : js.value("change_rules", json::array()))
                s.change_rules.emplace_back(r.at(0).get<std::string>(), r.at(1).get<std::string>());
            s.rules = js.value("rules", json::object());
            map.driving_sets.push_back(std::move(s));
        }
        for (const auto& js : j.value("detectable_sets", json::array())) {
            DetectableLaneSet s;
            s.id = js.at("id").get<std::string>();
            s.lane_ids = js.value("lane_ids", std::vector<std::string>{});
            s.default_lane_width_m = js.at("default_lane_width").get<double>();
            s.left_boundary = parseLineSpec(js.at("left_boundary"));
            s.right_boundary = parseLineSpec(js.at("right_boundary"));
            s.dash_interval_m = js.value("dash_interval", 0.0);
            if (js.contains("suggested_window")) {
                s.suggested_window_w_m = js.at("suggested_window").at(0).get<double>();
                s.suggested_window_h_m = js.at("suggested_window").at(1).get<double>();
            }
            map.detectable_sets.push_back(std::move(s));
        }
        for (const auto& jp : j.value("points", json::array())) {
            MapPoint p;
            p.id = jp.at("id").get<std::string>();
            p.kind = fromName(kPointKindNames, jp.at("kind").get<std::string>(), "point kind");
            p.latitude_deg = jp.at("position").at(0).get<double>();
            p.longitude_deg = jp.at("position").at(1).get<double>();
            p.direction_deg = jp.at("direction").get<double>();
            map.points.push_back(std::move(p));
        }
        for (const auto& jf : j.value("free_spaces", json::array())) {
            FreeSpace f;
            f.id = jf.at("id").get<std::string>();
            for (const auto& feat : jf.value("features", json::array())) {
                FreeSpaceFeature ff;
                ff.kind = fromName(kFeatureKindNames, feat.at("kind").get<std::string>(),
                                   "feature kind");
                ff.pose = {feat.at("pose").at(0).get<double>(), feat.at("pose").at(1).get<double>(),
                           feat.at("pose").at(2).get<double>()};
                ff.lane_id = feat.value("lane_id", "");
                f.features.push_back(std::move(ff));
            }
            f.entry_ids = jf.value("entry_ids", std::vector<std::string>{});
            f.exit_ids = jf.value("exit_ids", std::vector<std::string>{});
            f.rules = jf.value("rules", json::object());
            f.status = fromName(kStatusNames, jf.value("status", "normal"), "status");
            map.free_spaces.push_back(std::move(f));
        }
        for (const auto& jp : j.value("legal_pairs", json::array()))
            map.legal_pairs.emplace(jp.at(0).get<std::string>(), jp.at(1).get<std::string>());
    } catch (const json::exception& e) {
        throw Error(std::string("map schema error: ") + e.what());
    }
    auto violations = validateMap(map);
    if (!violations.empty()) {
        std::ostringstream oss;
        for (size_t i = 0; i < violations.size(); ++i)
            oss << (i ? "\n" : "") << violations[i];
        throw Error(oss.str());
    }
    return map;
}

TopologyMap loadMapFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open map file: " + path);
    std::ostringstream oss;
    oss << in.rdbuf();
    return loadMap(oss.str());
}

std::vector<std::string> validateMap(const TopologyMap& map) {
    std::vector<std::string> v;
    auto checkSpec = [&](const LineSpec& s, const std::string& where) {
        if (s.continuity == LineContinuity::dashed &&
            (s.dash_segment_length_m <= 0 || s.dash_interval_m <= 0))
            v.push_back(where + ": dashed spec needs positive segment length and interval");
    };
    std::set<std::string> ids;
    auto checkUnique = [&](const std::string& id, const std::string& what) {
        if (!ids.insert(id).second) v.push_back("duplicate id '" + id + "' (" + what + ")");
    };
    for (const auto& l : map.lanes) checkUnique(l.id, "lane");
    for (const auto& s : map.driving_sets) checkUnique(s.id, "driving set");
    for (const auto& s : map.detectable_sets) checkUnique(s.id, "detectable set");
    for (const auto& p : map.points) checkUnique(p.id, "point");
    for (const auto& f : map.free_spaces) checkUnique(f.id, "free space");

    for (const auto& l : map.lanes) {
        if (!map.findDetectableSet(l.detectable_set_id))
            v.push_back("lane '" + l.id + "' references missing detectable set '" +
                        l.detectable_set_id + "'");
        if (!map.findDrivingSet(l.driving_set_id))
            v.push_back("lane '" + l.id + "' references missing driving set '" + l.driving_set_id +
                        "'");
        if (l.per_window_turn_limit_deg < 0)
            v.push_back("lane '" + l.id + "': per_window_turn_limit must be >= 0");
        if (l.left) checkSpec(*l.left, "lane '" + l.id + "' left");
        if (l.right) checkSpec(*l.right, "lane '" + l.id + "' right");
        for (const auto& n : l.neighbor_ids) {
            const Lane* nb = map.findLane(n);
            if (!nb) {
                v.push_back("lane '" + l.id + "' references missing neighbor '" + n + "'");
                continue;
            }
            if (nb->driving_set_id == l.driving_set_id &&
                std::find(nb->neighbor_ids.begin(), nb->neighbor_ids.end(), l.id) ==
                    nb->neighbor_ids.end())
                v.push_back("lanes '" + l.id + "' and '" + n +
                            "': neighbors not symmetric within driving set");
        }
        for (const auto& e : l.entrance_ids) {
            const MapPoint* p = map.findPoint(e);
            if (!p)
                v.push_back("lane '" + l.id + "' references missing entrance '" + e + "'");
            else if (p->kind != PointKind::entry)
                v.push_back("lane '" + l.id + "': point '" + e + "' is not an entry");
        }
        for (const auto& e : l.exit_ids) {
            const MapPoint* p = map.findPoint(e);
            if (!p)
                v.push_back("lane '" + l.id + "' references missing exit '" + e + "'");
            else if (p->kind != PointKind::exit)
                v.push_back("lane '" + l.id + "': point '" + e + "' is not an exit");
        }
        if (l.status_window && !validIsoInterval(*l.status_window))
            v.push_back("lane '" + l.id + "': status_window is not an ISO-8601 interval");
    }
    for (const auto& s : map.detectable_sets) {
        if (s.default_lane_width_m <= 0)
            v.push_back("detectable set '" + s.id + "': default_lane_width must be > 0");
        checkSpec(s.left_boundary, "detectable set '" + s.id + "' left_boundary");
        checkSpec(s.right_boundary, "detectable set '" + s.id + "' right_boundary");
        if (s.lane_ids.empty())
            v.push_back("detectable set '" + s.id + "' has no lanes");
        for (const auto& lid : s.lane_ids) {
            const Lane* l = map.findLane(lid);
            if (!l)
                v.push_back("detectable set '" + s.id + "' lists missing lane '" + lid + "'");
            else if (l->detectable_set_id != s.id)
                v.push_back("lane '" + lid + "' listed in set '" + s.id +
                            "' but references set '" + l->detectable_set_id + "'");
        }
    }
    for (const auto& s : map.driving_sets) {
        for (const auto& lid : s.lane_ids) {
            const Lane* l = map.findLane(lid);
            if (!l) {
                v.push_back("driving set '" + s.id + "' lists missing lane '" + lid + "'");
                continue;
            }
            if (l->driving_set_id != s.id)
                v.push_back("lane '" + lid + "' listed in driving set '" + s.id +
                            "' but references set '" + l->driving_set_id + "'");
            const Lane* first = map.findLane(s.lane_ids.front());
            if (first && angleDiff(l->start_direction_deg, first->start_direction_deg) > 90.0)
                v.push_back("driving set '" + s.id + "': lanes '" + s.lane_ids.front() +
                            "' and '" + lid + "' do not share a travel direction");
        }
    }
    for (const auto& f : map.free_spaces) {
        for (const auto& id : f.entry_ids)
            if (!map.findPoint(id))
                v.push_back("free space '" + f.id + "' references missing point '" + id + "'");
        for (const auto& id : f.exit_ids)
            if (!map.findPoint(id))
                v.push_back("free space '" + f.id + "' references missing point '" + id + "'");
        for (const auto& feat : f.features)
            if (!feat.lane_id.empty() && !map.findLane(feat.lane_id))
                v.push_back("free space '" + f.id + "' feature references missing lane '" +
                            feat.lane_id + "'");
    }
    for (const auto& [entry, exit] : map.legal_pairs) {
        const MapPoint* pe = map.findPoint(entry);
        const MapPoint* px = map.findPoint(exit);
        if (!pe) v.push_back("legal pair references missing point '" + entry + "'");
        if (!px) v.push_back("legal pair references missing point '" + exit + "'");
        if (pe && pe->kind != PointKind::entry)
            v.push_back("legal pair: point '" + entry + "' is not an entry");
        if (px && px->kind != PointKind::exit)
            v.push_back("legal pair: point '" + exit + "' is not an exit");
        if (pe && px) {
            bool shared = false;
            for (const auto& f : map.free_spaces) {
                bool has_entry = std::find(f.entry_ids.begin(), f.entry_ids.end(), entry) !=
                                 f.entry_ids.end();
                bool has_exit =
                    std::find(f.exit_ids.begin(), f.exit_ids.end(), exit) != f.exit_ids.end();
                if (has_entry && has_exit) {
                    shared = true;
                    break;
                }
            }
            if (!shared)
                v.push_back("legal pair ('" + entry + "', '" + exit +
                            "') does not share a free space");
        }
    }
    return v;
}

std::string serializeMap(const TopologyMap& map) {
    json j;
    j["version"] = map.version;
    j["lanes"] = json::array();
    for (const auto& l : map.lanes) {
        json jl{{"id", l.id},
                {"detectable_set", l.detectable_set_id},
                {"driving_set", l.driving_set_id},
                {"ending", toString(l.ending)},
                {"start_direction", l.start_direction_deg},
                {"per_window_turn_limit", l.per_window_turn_limit_deg},
                {"neighbors", l.neighbor_ids},
                {"entrance_ids", l.entrance_ids},
                {"exit_ids", l.exit_ids},
                {"rules", l.rules},
                {"status", toString(l.status)}};
        if (l.left) jl["left"] = dumpLineSpec(*l.left);
        if (l.right) jl["right"] = dumpLineSpec(*l.right);
        if (l.status_window) jl["status_window"] = *l.status_window;
        j["lanes"].push_back(std::move(jl));
    }
    j["driving_sets"] = json::array();
    for (const auto& s : map.driving_sets) {
        json rules = json::array();
        for (const auto& [from, to] : s.change_rules) rules.push_back(json::array({from, to}));
        j["driving_sets"].push_back(
            {{"id", s.id}, {"lane_ids", s.lane_ids}, {"change_rules", rules}, {"rules", s.rules}});
    }
    j["detectable_sets"] = json::array();
    for (const auto& s : map.detectable_sets)
        j["detectable_sets"].push_back({{"id", s.id},
                                        {"lane_ids", s.lane_ids},
                                        {"default_lane_width", s.default_lane_width_m},
                                        {"left_boundary", dumpLineSpec(s.left_boundary)},
                                        {"right_boundary", dumpLineSpec(s.right_boundary)},
                                        {"dash_interval", s.dash_interval_m},
                                        {"suggested_window",
                                         json::array({s.suggested_window_w_m, s.suggested_window_h_m})}});
    j["points"] = json::array();
    for (const auto& p : map.points)
        j["points"].push_back({{"id", p.id},
                               {"kind", toString(p.kind)},
                               {"position", json::array({p.latitude_deg, p.longitude_deg})},
                               {"direction", p.direction_deg}});
    j["free_spaces"] = json::array();
    for (const auto& f : map.free_spaces) {
        json feats = json::array();
        for (const auto& feat : f.features) {
            json jf{{"kind", toString(feat.kind)},
                    {"pose", json::array({feat.pose.x, feat.pose.y, feat.pose.heading_deg})}};
            if (!feat.lane_id.empty()) jf["lane_id"] = feat.lane_id;
            feats.push_back(std::move(jf));
        }
        j["free_spaces"].push_back({{"id", f.id},
                                    {"features", feats},
                                    {"entry_ids", f.entry_ids},
                                    {"exit_ids", f.exit_ids},
                                    {"rules", f.rules},
                                    {"status", toString(f.status)}});
    }
    j["legal_pairs"] = json::array();
    for (const auto& [entry, exit] : map.legal_pairs)
        j["legal_pairs"].push_back(json::array({entry, exit}));
    return j.dump(2);
}

LineSpec querySideSpec(const TopologyMap& map, const std::string& lane_id, LaneSide side) {
    const Lane* lane = map.findLane(lane_id);
    if (!lane) throw Error("unknown lane id: '" + lane_id + "'");
    if (side == LaneSide::left && lane->left) return *lane->left;
    if (side == LaneSide::right && lane->right) return *lane->right;
    const DetectableLaneSet* set = map.findDetectableSet(lane->detectable_set_id);
    if (!set) throw Error("lane '" + lane_id + "' references missing set");
    // lane 1 sits next to the right boundary (curb side), the last lane next
    // to the left boundary
    if (side == LaneSide::right && !set->lane_ids.empty() && set->lane_ids.front() == lane_id)
        return set->right_boundary;
    if (side == LaneSide::left && !set->lane_ids.empty() && set->lane_ids.back() == lane_id)
        return set->left_boundary;
    throw Error("lane '" + lane_id + "' has no authored " +
                (side == LaneSide::left ? std::string("left") : std::string("right")) +
                " spec and is not outermost");
}

}  // namespace ecp
