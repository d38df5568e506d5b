#ifndef ECP_NAVMATCH_HPP
#define ECP_NAVMATCH_HPP

#include <string>
#include <vector>

#include "ecp/topomap.hpp"

namespace ecp {

/// One turning point of the digital-map route.
struct TurningPoint {
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
    double alpha_deg = 0.0;  // compass direction before the turn
    double beta_deg = 0.0;   // compass direction after the turn
};

struct MatchResult {
    std::string entry_id;
    std::string exit_id;
    double f = 0.0;  // g * h
    double g = 0.0;  // meters
    double h = 0.0;  // degrees
    bool discontinuity = false;  // previous match's entry lane does not reach our exit
};

/// Local equirectangular projection of a lat/lon offset around `origin_lat`,
/// in meters.
Eigen::Vector2d latLonToMeters(double lat_deg, double lon_deg, double origin_lat_deg,
                               double origin_lon_deg);

/// Score one candidate pair: g is the summed distance of both points to the
/// turning point, h the summed wrapped angle differences (exit direction vs
/// alpha, entry direction vs beta), f = g*h.
MatchResult scorePair(const TurningPoint& t, const MapPoint& entry, const MapPoint& exit);

/// Argmin of f over the map's legal pairs. Ties break by smaller g, then
/// smaller h, then lexicographic (entry_id, exit_id). Throws when the map has
/// no legal pairs.
MatchResult matchTurningPoint(const TopologyMap& map, const TurningPoint& t);

/// Per-point matches in route order; a match is flagged when no lane connects
/// the previous entrance to its exit.
std::vector<MatchResult> matchRoute(const TopologyMap& map,
                                    const std::vector<TurningPoint>& route);

std::vector<TurningPoint> loadRouteFile(const std::string& path);

}  // namespace ecp

#endif
