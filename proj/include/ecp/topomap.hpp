#ifndef ECP_TOPOMAP_HPP
#define ECP_TOPOMAP_HPP

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecp/geometry.hpp"

namespace ecp {

enum class LineGeometry { straight, curved };
enum class LineContinuity { solid, dashed };
enum class LaneEnding { stop_line, merges_left, merges_right, splits, open };
enum class ElementStatus { normal, maintenance, closed };
enum class LaneSide { left, right };
enum class PointKind { entry, exit };
enum class FeatureKind { stop_line, crosswalk, lane_line, curb, sign, light };

/// Prior knowledge about one painted line (or curb), enough to pick and
/// configure a detector for it.
struct LineSpec {
    LineGeometry geometry = LineGeometry::straight;
    LineContinuity continuity = LineContinuity::solid;
    bool is_curb = false;
    double dash_segment_length_m = 0.0;  // dashed only
    double dash_interval_m = 0.0;        // dashed only
    std::optional<std::string> color_hint;
    double expected_direction_deg = 0.0;  // compass

    bool operator==(const LineSpec&) const = default;
};

/// Detector levels: 1 = dashed curve (most general) .. 4 = solid straight.
int detectorLevel(const LineSpec& spec);
/// A side that may carry several line types uses the most general detector.
int minDetectorLevel(const std::vector<LineSpec>& specs);

struct Lane {
    std::string id;
    std::string detectable_set_id;
    std::string driving_set_id;
    std::optional<LineSpec> left;
    std::optional<LineSpec> right;
    LaneEnding ending = LaneEnding::open;
    double start_direction_deg = 0.0;  // compass
    double per_window_turn_limit_deg = 5.0;
    std::vector<std::string> neighbor_ids;
    std::vector<std::string> entrance_ids;
    std::vector<std::string> exit_ids;
    nlohmann::json rules = nlohmann::json::object();
    ElementStatus status = ElementStatus::normal;
    std::optional<std::string> status_window;  // ISO-8601 interval

    bool operator==(const Lane&) const = default;
};

struct DetectableLaneSet {
    std::string id;
    std::vector<std::string> lane_ids;  // ordered from the curb, lane 1 first
    double default_lane_width_m = 3.5;
    LineSpec left_boundary;
    LineSpec right_boundary;
    double dash_interval_m = 0.0;
    double suggested_window_w_m = 1.2;
    double suggested_window_h_m = 2.5;

    bool operator==(const DetectableLaneSet&) const = default;
};

struct DrivingLaneSet {
    std::string id;
    std::vector<std::string> lane_ids;
    std::vector<std::pair<std::string, std::string>> change_rules;  // from -> to
    nlohmann::json rules = nlohmann::json::object();

    bool operator==(const DrivingLaneSet&) const = default;
};

/// Entrance or exit of a free space, on the digital-map (lat/lon) layer.
struct MapPoint {
    std::string id;
    PointKind kind = PointKind::entry;
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
    double direction_deg = 0.0;  // compass; beta for entries, alpha for exits

    bool operator==(const MapPoint&) const = default;
};

struct FreeSpaceFeature {
    FeatureKind kind = FeatureKind::lane_line;
    Pose2 pose;  // in the free-space frame, meters / math degrees
    std::string lane_id;

    bool operator==(const FreeSpaceFeature&) const = default;
};

struct FreeSpace {
    std::string id;
    std::vector<FreeSpaceFeature> features;
    std::vector<std::string> entry_ids;
    std::vector<std::string> exit_ids;
    nlohmann::json rules = nlohmann::json::object();
    ElementStatus status = ElementStatus::normal;

    bool operator==(const FreeSpace&) const = default;
};

struct TopologyMap {
    int version = 1;
    std::vector<Lane> lanes;
    std::vector<DrivingLaneSet> driving_sets;
    std::vector<DetectableLaneSet> detectable_sets;
    std::vector<MapPoint> points;
    std::vector<FreeSpace> free_spaces;
    std::set<std::pair<std::string, std::string>> legal_pairs;  // (entry, exit)

    const Lane* findLane(const std::string& id) const;
    const DetectableLaneSet* findDetectableSet(const std::string& id) const;
    const DrivingLaneSet* findDrivingSet(const std::string& id) const;
    const MapPoint* findPoint(const std::string& id) const;
    const FreeSpace* findFreeSpace(const std::string& id) const;
    /// 1-based lane number within its detectable set, counting from the curb.
    int laneNumber(const std::string& lane_id) const;

    bool operator==(const TopologyMap&) const = default;
};

/// Parse and fully validate a map document. Throws ecp::Error with one
/// message per violation (joined by newlines) on any failure.
TopologyMap loadMap(const std::string& text);
TopologyMap loadMapFile(const std::string& path);

/// All validation violations, empty when the map is sound.
std::vector<std::string> validateMap(const TopologyMap& map);

std::string serializeMap(const TopologyMap& map);

/// Line spec for one side of a lane; outermost lanes without an authored spec
/// fall back to the detectable-set boundary. Throws on unknown lane id.
LineSpec querySideSpec(const TopologyMap& map, const std::string& lane_id, LaneSide side);

// enum <-> string names used by the JSON schema
std::string toString(LineGeometry g);
std::string toString(LineContinuity c);
std::string toString(LaneEnding e);
std::string toString(ElementStatus s);
std::string toString(PointKind k);
std::string toString(FeatureKind k);

}  // namespace ecp

#endif
