#ifndef ECP_LOCALIZER_HPP
#define ECP_LOCALIZER_HPP

#include <optional>
#include <string>
#include <vector>

#include "ecp/detector.hpp"
#include "ecp/topomap.hpp"

namespace ecp {

enum class Mode { cruising, turning };
enum class TurnPhase { exiting_lane, in_free_space, entering_target };
std::string toString(Mode m);
std::string toString(TurnPhase p);

/// Lane-level (cruising) or metric (turning) vehicle state. The metric pose
/// lives in the current free space's scene frame and exists only while
/// turning.
struct VehicleState {
    Mode mode = Mode::cruising;
    TurnPhase phase = TurnPhase::exiting_lane;  // meaningful while turning
    std::string detectable_set_id;
    int lane_number = 1;  // 1 = curbside
    std::optional<Pose2> pose;
    double lane_width_m = 3.5;
    int lane_width_rule = 4;
    bool lane_ending = false;   // ego line types signal the lane's end
    bool lane_consistent = true;
    bool degraded = false;
    int frames_without_anchor = 0;
    std::optional<Pose2> last_delta;  // vehicle-frame motion, for dead reckoning
    std::string free_space_id;        // set when turning
    std::string target_lane_id;       // entrance lane to reach
};

/// One classified detection in the vehicle frame (x right, y forward, meters).
struct ObservedLine {
    LineSpec spec;                  // observed type, not the map's claim
    double lateral_offset_m = 0.0;  // signed, + to the vehicle's right
    double direction_deg = 90.0;    // math degrees in the vehicle frame
    double length_m = 0.0;
    LaneEnding ending = LaneEnding::open;
};

/// A detection bound (or not yet bound) to one free-space feature.
struct MatchedFeature {
    FeatureKind kind = FeatureKind::lane_line;
    int feature_index = -1;  // into FreeSpace::features, -1 = unmatched
    bool is_line = true;
    Eigen::Vector2d point_v{0, 0};  // a point of the feature, vehicle frame
    double direction_deg = 90.0;    // line direction, vehicle frame
};

struct Anchor {
    bool strong = false;
    MatchedFeature a;
    MatchedFeature b;  // strong only
};

struct RebuiltScene {
    long frame_id = 0;
    std::vector<FreeSpaceFeature> features;  // poses re-expressed in the scene frame
    Pose2 vehicle;
    std::optional<Pose2> target_entrance;
    bool degraded = false;
};

/// Scene frame of a free space: origin at the first declared feature, x along
/// its direction. Throws when the space has no features.
Pose2 sceneFrame(const FreeSpace& fs);
/// Feature pose re-expressed in the scene frame.
Pose2 featureInScene(const FreeSpace& fs, const FreeSpaceFeature& f);

VehicleState initState(const TopologyMap& map, const std::string& detectable_set_id,
                       int lane_number);

/// Lane width by the first applicable of four rules; returns (meters, rule).
std::pair<double, int> resolveLaneWidth(const std::vector<ObservedLine>& detections,
                                        const DetectableLaneSet& set, const VehicleState& state);

VehicleState updateCruise(const VehicleState& state, const std::vector<ObservedLine>& detections,
                          const TopologyMap& map);

/// Bind unmatched observations to the nearest compatible free-space feature
/// as predicted from `pose_guess` (vehicle pose in the scene frame).
std::vector<MatchedFeature> matchFeatures(const std::vector<MatchedFeature>& observations,
                                          const FreeSpace& fs, const Pose2& pose_guess);

/// Every matched non-parallel line pair (>= 20 deg apart) forms a strong
/// anchor; matched point features form weak anchors.
std::vector<Anchor> buildAnchors(const std::vector<MatchedFeature>& features,
                                 const FreeSpace& fs);

/// Solve the vehicle pose in the scene frame from anchors. Strong anchors fix
/// the full pose (least squares over line constraints); weak-only input needs
/// `previous` for heading. Throws with neither anchors nor previous pose.
RebuiltScene rebuildScene(const std::vector<Anchor>& anchors, const FreeSpace& fs,
                          const std::optional<Pose2>& previous,
                          const std::string& target_lane_id = "");

/// Per-frame inputs while turning.
struct TurnInput {
    std::vector<MatchedFeature> features;  // vehicle frame; unmatched allowed
    bool target_set_detected = false;
    int target_lane_number = 1;
};

/// Anchor-loss tolerance before the degraded flag raises.
inline constexpr int kMaxAnchorlessFrames = 5;

VehicleState stepFreeSpace(const VehicleState& state, const TurnInput& input,
                           const TopologyMap& map);

}  // namespace ecp

#endif
