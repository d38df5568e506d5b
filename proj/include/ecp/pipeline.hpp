#ifndef ECP_PIPELINE_HPP
#define ECP_PIPELINE_HPP

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "ecp/detector.hpp"
#include "ecp/localizer.hpp"
#include "ecp/synth.hpp"
#include "ecp/topomap.hpp"

namespace ecp {

struct PipelineConfig {
    DetectorConfig detector;
    double stop_gate_m = 6.0;       // stop-line distance that triggers the turn
    double curb_brightness = 235.0; // curbs render brighter than paint
};

/// Vehicle position in frame meters; frames look along +y, so the vehicle
/// frame and the frame's meter frame share axes.
Eigen::Vector2d vehicleInFrame(const GrayImage& frame);

/// One cruising frame: whole-image line search for the set's boundary types,
/// classified into vehicle-frame observations, plus the nearest stop bar.
struct FrameObservation {
    std::vector<DetectedLine> lines;  // frame meter coordinates
    std::vector<ObservedLine> observed;
    std::optional<double> stop_distance_m;
    std::optional<StopLineResult> stop;
};

FrameObservation observeCruise(const GrayImage& frame, const DetectableLaneSet& set,
                               const TopologyMap& map, const PipelineConfig& cfg);

/// One turning frame: per-feature line searches guided by the predicted pose
/// (vehicle pose in the scene frame, heading = rotation vehicle->scene).
std::vector<MatchedFeature> observeTurn(const GrayImage& frame, const FreeSpace& fs,
                                        const Pose2& predicted, const TopologyMap& map,
                                        const PipelineConfig& cfg);

struct FrameStateRecord {
    long frame = 0;
    VehicleState state;
    int anchors_used = 0;
};

/// Sequential localization over loaded frames. `free_space_id` and
/// `target_lane_id` come from the matched route.
std::vector<FrameStateRecord> runLocalize(const TopologyMap& map,
                                          const std::vector<GrayImage>& frames,
                                          const std::string& set_id, int lane_number,
                                          const std::string& free_space_id,
                                          const std::string& target_lane_id,
                                          const PipelineConfig& cfg);

nlohmann::json lineToJson(const DetectedLine& line);
nlohmann::json detectRecord(const std::string& frame_name, const std::vector<DetectedLine>& lines);
nlohmann::json stateRecord(const FrameStateRecord& rec);

/// Detected lines red, stop lines blue, guide lines green.
RgbImage renderOverlay(const GrayImage& bev, const std::vector<DetectedLine>& lines,
                       const std::vector<std::vector<Eigen::Vector2d>>& guides = {});

}  // namespace ecp

#endif
