#ifndef ECP_DETECTOR_HPP
#define ECP_DETECTOR_HPP

#include <optional>
#include <vector>

#include "ecp/imageproc.hpp"
#include "ecp/topomap.hpp"

namespace ecp {

/// Tunables for one line-detection run. Defaults suit 0.02 m/px BEV imagery;
/// map knowledge (dash interval, suggested window, turn limit) overrides them.
struct DetectorConfig {
    double window_w_m = 1.2;
    double window_h_m = 2.5;
    double dash_interval_m = 0.0;        // mark-start to mark-start step
    double dash_segment_length_m = 0.0;  // expected mark length
    double mark_length_tolerance_m = 1.0;
    double turn_limit_deg = 8.0;
    EdgeKernel kernel;
    double threshold_percentile = 85.0;
    int threshold_floor = 25;
    int cluster_gap = 2;
    int min_pixels = 6;
    int max_empty_windows = 2;
    double line_width_m = 0.12;       // expected paint width
    double pair_max_separation_m = 0.5;  // left/right edge pairing gate
    bool probe_stop_line = true;
    bool probe_split_merge = true;

    double minMarkLength() const { return std::max(0.0, dash_segment_length_m - mark_length_tolerance_m); }
    double maxMarkLength() const { return dash_segment_length_m + mark_length_tolerance_m; }
};

/// Derive a config from map knowledge for one line spec.
DetectorConfig configForSpec(const LineSpec& spec, const DetectableLaneSet* set = nullptr);

enum class Termination { image_edge, stop_line, split, merge, lost };
std::string toString(Termination t);

/// One fitted candidate inside a window, pixel coordinates of the frame it
/// was fitted in; lengths and scores are metric.
struct LineCandidate {
    Eigen::Vector2d p0_px{0, 0};  // lower endpoint (toward the vehicle)
    Eigen::Vector2d p1_px{0, 0};
    std::vector<Eigen::Vector2d> samples_px;  // >2 points for curved fits
    double angle_deg = 0.0;                   // [0,180), math convention
    double length_m = 0.0;
    double mean_response = 0.0;
    double score = 0.0;  // length * mean edge response
    EdgeSide side = EdgeSide::left;
    int n_pixels = 0;
};

struct SplitMergeEvent {
    Eigen::Vector2d position_m{0, 0};
    bool split = true;  // false = merge
    LaneSide side = LaneSide::right;
};

struct StopLineResult {
    bool found = false;
    Eigen::Vector2d a_m{0, 0};
    Eigen::Vector2d b_m{0, 0};
};

/// Per-window provenance kept on the detection result.
struct WindowRecord {
    WindowRegion region;
    std::optional<LineCandidate> left;
    std::optional<LineCandidate> right;
    bool hit = false;
};

struct DetectedLine {
    std::vector<Eigen::Vector2d> polyline_m;  // centerline, ordered along travel
    LineSpec spec;
    std::vector<WindowRecord> windows;
    Termination termination = Termination::lost;
    double left_length_m = 0.0;   // extent until the left-edge chain first breaks
    double right_length_m = 0.0;
    double confidence = 0.0;
    std::optional<SplitMergeEvent> event;
    std::optional<StopLineResult> stop_line;
    // where each edge chain first broke, when it did
    std::optional<Eigen::Vector2d> left_break_m;
    std::optional<Eigen::Vector2d> right_break_m;

    double length() const;
};

struct DetectStart {
    Eigen::Vector2d point_m{0, 0};
    double direction_deg = 90.0;  // math convention; 90 = up the image
};

/// Sliding-window line following from a start point. The BEV image must carry
/// meters_per_pixel. Throws when the start lies outside the image or the spec
/// is degenerate.
DetectedLine detectLine(const GrayImage& bev, const DetectStart& start, const LineSpec& spec,
                        const DetectorConfig& cfg);

/// Whole-image search for a line of known direction but unknown position.
/// Returns the longest merged result, or nullopt when nothing is found.
std::optional<DetectedLine> detectSpecialLine(const GrayImage& bev, double direction_deg,
                                              const LineSpec& spec, const DetectorConfig& cfg);

/// All merged positive results of the special-line search, longest first.
std::vector<DetectedLine> detectSpecialLines(const GrayImage& bev, double direction_deg,
                                             const LineSpec& spec, const DetectorConfig& cfg);

/// Probe two windows flanking the upper break of `ended_line` for a bar
/// perpendicular to it (within 15 degrees).
StopLineResult detectStopLine(const GrayImage& bev, const DetectedLine& ended_line,
                              const DetectorConfig& cfg);

/// Classify an extent mismatch between the two edge chains by probing one
/// window ahead of and one behind the break along the departing direction.
std::optional<SplitMergeEvent> detectSplitMerge(const DetectedLine& line, const GrayImage& bev,
                                                const DetectorConfig& cfg);

/// Fit one cluster: total least squares for straight specs, Catmull-Rom
/// through per-row centroids for curved ones. Pixel coordinates are those of
/// the response image. Throws when the cluster is below min_pixels.
LineCandidate fitSegment(const PixelCluster& cluster, const GrayImage& response,
                         const LineSpec& spec, double meters_per_pixel, int min_pixels);

/// Angle gate, dash-length gate, then highest score. Nullopt when empty.
std::optional<LineCandidate> filterCandidates(std::vector<LineCandidate> candidates,
                                              double expected_direction_deg, const LineSpec& spec,
                                              const DetectorConfig& cfg);

}  // namespace ecp

#endif
