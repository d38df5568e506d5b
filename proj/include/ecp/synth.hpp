#ifndef ECP_SYNTH_HPP
#define ECP_SYNTH_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecp/image.hpp"
#include "ecp/topomap.hpp"

namespace ecp {

/// Deterministic RNG for scene generation. mt19937_64 with hand-rolled
/// uniforms so output bytes do not depend on the standard library's
/// distribution implementations.
class SynthRng {
public:
    explicit SynthRng(std::uint64_t seed) : state_(seed * 0x9E3779B97F4A7C15ULL + 1) {}
    std::uint64_t nextU64() {
        // xorshift64*ized splitmix step
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    double nextDouble() { return static_cast<double>(nextU64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * nextDouble(); }
    int nextInt(int n) { return static_cast<int>(nextU64() % static_cast<std::uint64_t>(n)); }

private:
    std::uint64_t state_;
};

struct NoiseProfile {
    double speckle_density = 0.0;  // fraction of pixels replaced by speckle
    int shadow_bands = 0;
    int occluders = 0;
    int blur_passes = 0;

    bool any() const {
        return speckle_density > 0 || shadow_bands > 0 || occluders > 0 || blur_passes > 0;
    }
};

/// One painted line: x(y) = x0 + slope*y + curvature*y^2, in scene meters
/// (y is the travel direction, up the image).
struct LineLayout {
    double x0_m = 0.0;
    double slope = 0.0;
    double curvature = 0.0;  // 1/m
    LineSpec spec;
    double y_start_m = 0.0;
    double y_end_m = -1.0;  // -1 = full scene height
    double brightness = 200.0;
};

struct BranchLayout {
    double y_branch_m = 0.0;  // where the pair of edges disagrees
    bool split = true;        // split (diverges ahead) vs merge (joins from behind)
    LaneSide side = LaneSide::right;
    double departure_deg = 20.0;  // angle between branch and main line
    double length_m = 6.0;
};

struct StopLineLayout {
    double y_m = 0.0;
    double x_start_m = 0.0;
    double x_end_m = 0.0;
    double brightness = 200.0;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    double width_m = 8.0;
    double height_m = 16.0;
    double meters_per_pixel = 0.02;
    double line_width_m = 0.12;
    double background = 20.0;
    std::vector<LineLayout> lines;
    std::optional<BranchLayout> branch;   // attached to lines[0]
    std::vector<StopLineLayout> stop_lines;
    NoiseProfile noise;
};

struct SplitMergeTruth {
    Eigen::Vector2d position_m{0, 0};
    bool split = true;
    LaneSide side = LaneSide::right;
};

struct SceneTruth {
    // one polyline per authored line, meter coordinates, ordered by y;
    // dashed lines keep the full centerline here and the marks separately
    std::vector<std::vector<Eigen::Vector2d>> polylines;
    std::vector<std::vector<std::pair<double, double>>> dash_marks;  // (y0, y1) per line
    std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> stop_lines;
    std::vector<SplitMergeTruth> events;
};

struct Scene {
    GrayImage image;
    SceneTruth truth;
};

/// Rasterize the spec into a BEV image plus exact ground truth. Same spec and
/// seed always produce identical bytes. Throws on impossible layouts.
Scene genScene(const SceneSpec& spec);

/// Anti-aliased thick segment, coordinates in meters; pixels take the max of
/// their current value and the line coverage.
void drawSegmentMeters(GrayImage& img, const Eigen::Vector2d& a_m, const Eigen::Vector2d& b_m,
                       double width_m, double brightness);

struct FrameManifest {
    std::vector<std::string> frame_paths;
    std::vector<Pose2> true_poses;  // scene-frame pose per frame
    double meters_per_pixel = 0.02;
    int frame_width_px = 0;
    int frame_height_px = 0;
    std::string map_path;
    std::string detectable_set_id;
    int initial_lane = 1;
    std::string free_space_id;   // empty when the route stays in one set
    std::string target_lane_id;
};

/// Render vehicle-centred BEV crops of one scene along a motion path.
/// The vehicle sits at the bottom-center anchor of every frame, heading up.
/// Throws if the path leaves the scene.
std::vector<GrayImage> genSequence(const Scene& scene, const std::vector<Pose2>& motion,
                                   int frame_width_px, int frame_height_px);

void writeManifest(const std::string& path, const FrameManifest& manifest);
FrameManifest readManifest(const std::string& path);

/// Vehicle anchor pixel inside a frame (bottom-center, 10% margin).
Eigen::Vector2d vehicleAnchorPx(int frame_width_px, int frame_height_px);

// --- scripted intersection scenario (acceptance harness) ---

struct IntersectionScenario {
    Scene scene;                 // full top-down world
    TopologyMap map;             // two detectable sets joined by one free space
    std::vector<Pose2> motion;   // world-frame vehicle poses across the crossing
    int frame_width_px = 300;
    int frame_height_px = 400;
    std::string target_entrance_lane;
};

/// Right-turn crossing: cruise north on a two-lane road, stop line, free
/// space, enter an eastbound road. The free-space frame equals the world
/// frame of the returned scene.
IntersectionScenario buildIntersectionScenario(std::uint64_t seed, int n_frames = 100);

}  // namespace ecp

#endif
