#include "ecp/navmatch.hpp"

#include <fstream>

#include "ecp/imageproc.hpp"  // ecp::Error

namespace ecp {

namespace {
constexpr double kEarthRadiusM = 6371000.0;
}

Eigen::Vector2d latLonToMeters(double lat_deg, double lon_deg, double origin_lat_deg,
                               double origin_lon_deg) {
    double x = deg2rad(lon_deg - origin_lon_deg) * std::cos(deg2rad(origin_lat_deg)) * kEarthRadiusM;
    double y = deg2rad(lat_deg - origin_lat_deg) * kEarthRadiusM;
    return {x, y};
}

MatchResult scorePair(const TurningPoint& t, const MapPoint& entry, const MapPoint& exit) {
    MatchResult r;
    r.entry_id = entry.id;
    r.exit_id = exit.id;
    double d_in = latLonToMeters(entry.latitude_deg, entry.longitude_deg, t.latitude_deg,
                                 t.longitude_deg)
                      .norm();
    double d_out = latLonToMeters(exit.latitude_deg, exit.longitude_deg, t.latitude_deg,
                                  t.longitude_deg)
                       .norm();
    r.g = d_in + d_out;
    // the exit is taken before the turn (alpha), the entry after it (beta)
    r.h = angleDiff(t.alpha_deg, exit.direction_deg) + angleDiff(t.beta_deg, entry.direction_deg);
    r.f = r.g * r.h;
    return r;
}

MatchResult matchTurningPoint(const TopologyMap& map, const TurningPoint& t) {
    if (map.legal_pairs.empty()) throw Error("match: map has no legal pairs");
    bool have = false;
    MatchResult best;
    for (const auto& [entry_id, exit_id] : map.legal_pairs) {
        const MapPoint* entry = map.findPoint(entry_id);
        const MapPoint* exit = map.findPoint(exit_id);
        if (!entry || !exit) continue;
        MatchResult r = scorePair(t, *entry, *exit);
        auto key = [](const MatchResult& m) {
            return std::make_tuple(m.f, m.g, m.h, m.entry_id, m.exit_id);
        };
        if (!have || key(r) < key(best)) {
            best = r;
            have = true;
        }
    }
    if (!have) throw Error("match: no resolvable legal pair");
    return best;
}

std::vector<MatchResult> matchRoute(const TopologyMap& map,
                                    const std::vector<TurningPoint>& route) {
    if (route.empty()) throw Error("match: empty route");
    std::vector<MatchResult> results;
    for (const auto& t : route) {
        MatchResult r = matchTurningPoint(map, t);
        if (!results.empty()) {
            // some lane must start at the previous entrance and end at our exit
            const std::string& prev_entry = results.back().entry_id;
            bool connected = false;
            for (const auto& lane : map.lanes) {
                bool from = std::find(lane.entrance_ids.begin(), lane.entrance_ids.end(),
                                      prev_entry) != lane.entrance_ids.end();
                bool to = std::find(lane.exit_ids.begin(), lane.exit_ids.end(), r.exit_id) !=
                          lane.exit_ids.end();
                if (from && to) {
                    connected = true;
                    break;
                }
            }
            r.discontinuity = !connected;
        }
        results.push_back(std::move(r));
    }
    return results;
}

std::vector<TurningPoint> loadRouteFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open route file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(std::string("route parse error: ") + e.what());
    }
    std::vector<TurningPoint> route;
    for (const auto& jt : j) {
        TurningPoint t;
        t.latitude_deg = jt.at("position").at(0).get<double>();
        t.longitude_deg = jt.at("position").at(1).get<double>();
        t.alpha_deg = jt.at("alpha").get<double>();
        t.beta_deg = jt.at("beta").get<double>();
        route.push_back(t);
    }
    return route;
}

}  // namespace ecp
