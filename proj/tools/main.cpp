#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "ecp/navmatch.hpp"
#include "ecp/pipeline.hpp"
#include "ecp/png_io.hpp"
#include "ecp/synth.hpp"
#include "ecp/topomap.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitValidation = 2;

// every run that produces files also records the exact config it used
void writeRunConfig(const std::string& out_dir, const json& effective) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "config.json");
    out << effective.dump(2) << "\n";
}

ecp::DetectorConfig loadDetectorConfig(const std::string& config_path, json& echo) {
    ecp::DetectorConfig cfg;
    std::string path = config_path;
    if (path.empty())
        if (const char* env = std::getenv("ECPRIOR_CONFIG")) path = env;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw ecp::Error("cannot open config: " + path);
    json j;
    in >> j;
    cfg.window_w_m = j.value("window_w_m", cfg.window_w_m);
    cfg.window_h_m = j.value("window_h_m", cfg.window_h_m);
    cfg.threshold_percentile = j.value("threshold_percentile", cfg.threshold_percentile);
    cfg.threshold_floor = j.value("threshold_floor", cfg.threshold_floor);
    cfg.cluster_gap = j.value("cluster_gap", cfg.cluster_gap);
    cfg.min_pixels = j.value("min_pixels", cfg.min_pixels);
    cfg.turn_limit_deg = j.value("turn_limit_deg", cfg.turn_limit_deg);
    echo["config_file"] = path;
    echo["config"] = j;
    return cfg;
}

int cmdValidateMap(const std::string& map_path) {
    std::string text;
    {
        std::ifstream in(map_path);
        if (!in) {
            std::cerr << "cannot open map: " << map_path << "\n";
            return kExitInput;
        }
        text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    try {
        ecp::loadMap(text);
    } catch (const ecp::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitValidation;
    }
    std::cout << "map ok\n";
    return kExitOk;
}

int cmdMatchNav(const std::string& map_path, const std::string& route_path,
                const std::string& out_path) {
    try {
        ecp::TopologyMap map = ecp::loadMapFile(map_path);
        auto route = ecp::loadRouteFile(route_path);
        auto results = ecp::matchRoute(map, route);
        std::ostringstream body;
        for (size_t i = 0; i < results.size(); ++i) {
            json j;
            j["turning_point"] = i;
            j["entry"] = results[i].entry_id;
            j["exit"] = results[i].exit_id;
            j["f"] = results[i].f;
            j["g"] = results[i].g;
            j["h"] = results[i].h;
            j["discontinuity"] = results[i].discontinuity;
            body << j.dump() << "\n";
        }
        if (out_path.empty()) {
            std::cout << body.str();
        } else {
            std::ofstream out(out_path);
            if (!out) throw ecp::Error("cannot write: " + out_path);
            out << body.str();
        }
    } catch (const ecp::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitInput;
    }
    return kExitOk;
}

int cmdDetect(const std::vector<std::string>& images, const std::string& map_path,
              const std::string& set_id, double scale, const std::string& out_dir, bool overlay,
              const std::string& config_path) {
    json echo{{"command", "detect"}, {"map", map_path},    {"set", set_id},
              {"scale", scale},      {"overlay", overlay}, {"images", images}};
    ecp::PipelineConfig cfg;
    try {
        cfg.detector = loadDetectorConfig(config_path, echo);
    } catch (const ecp::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitInput;
    }
    ecp::TopologyMap map;
    try {
        map = ecp::loadMapFile(map_path);
    } catch (const ecp::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitInput;
    }
    const ecp::DetectableLaneSet* set =
        set_id.empty() ? (map.detectable_sets.empty() ? nullptr : &map.detectable_sets.front())
                       : map.findDetectableSet(set_id);
    if (!set) {
        std::cerr << "unknown detectable set: " << set_id << "\n";
        return kExitValidation;
    }
    writeRunConfig(out_dir, echo);
    std::ofstream results(fs::path(out_dir) / "detect.jsonl");
    bool any_error = false;
    for (const auto& path : images) {
        try {
            ecp::GrayImage img = ecp::readPngGray(path);
            img.meters_per_pixel = scale;
            ecp::FrameObservation obs = ecp::observeCruise(img, *set, map, cfg);
            results << ecp::detectRecord(path, obs.lines).dump() << "\n";
            if (overlay) {
                ecp::RgbImage over = ecp::renderOverlay(img, obs.lines);
                ecp::writePng((fs::path(out_dir) /
                               (fs::path(path).stem().string() + "_overlay.png")).string(),
                              over);
            }
        } catch (const ecp::Error& e) {
            json err{{"frame", path}, {"error", e.what()}};
            results << err.dump() << "\n";
            any_error = true;
        }
    }
    return any_error ? kExitInput : kExitOk;
}

int cmdLocalize(const std::string& manifest_path, const std::string& out_dir,
                const std::string& config_path) {
    json echo{{"command", "localize"}, {"manifest", manifest_path}};
    ecp::PipelineConfig cfg;
    try {
        cfg.detector = loadDetectorConfig(config_path, echo);
        ecp::FrameManifest man = ecp::readManifest(manifest_path);
        ecp::TopologyMap map = ecp::loadMapFile(man.map_path);
        std::vector<ecp::GrayImage> frames;
        for (const auto& p : man.frame_paths) {
            try {
                ecp::GrayImage img = ecp::readPngGray(p);
                img.meters_per_pixel = man.meters_per_pixel;
                frames.push_back(std::move(img));
            } catch (const ecp::Error& e) {
                std::cerr << "frame " << p << ": " << e.what() << "\n";
                return kExitInput;
            }
        }
        writeRunConfig(out_dir, echo);
        auto records = ecp::runLocalize(map, frames, man.detectable_set_id, man.initial_lane,
                                        man.free_space_id, man.target_lane_id, cfg);
        std::ofstream out(fs::path(out_dir) / "states.jsonl");
        for (const auto& r : records) out << ecp::stateRecord(r).dump() << "\n";

        if (man.true_poses.size() == records.size()) {
            double se = 0.0;
            int n = 0;
            for (size_t i = 0; i < records.size(); ++i) {
                if (!records[i].state.pose) continue;
                const ecp::Pose2& p = *records[i].state.pose;
                se += (Eigen::Vector2d(p.x, p.y) -
                       Eigen::Vector2d(man.true_poses[i].x, man.true_poses[i].y)).squaredNorm();
                ++n;
            }
            json summary{{"frames", records.size()},
                         {"pose_rms_m", n ? std::sqrt(se / n) : 0.0},
                         {"pose_frames", n}};
            std::ofstream sum(fs::path(out_dir) / "summary.json");
            sum << summary.dump(2) << "\n";
        }
    } catch (const ecp::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitInput;
    }
    return kExitOk;
}

ecp::SceneSpec basicScene(const std::string& kind, std::uint64_t seed, bool noisy) {
    ecp::SceneSpec spec;
    spec.seed = seed;
    ecp::LineLayout line;
    line.x0_m = 4.0;
    if (kind.find("dashed") != std::string::npos) {
        line.spec.continuity = ecp::LineContinuity::dashed;
        line.spec.dash_segment_length_m = 3.0;
        line.spec.dash_interval_m = 6.0;
    }
    if (kind.find("curved") != std::string::npos) {
        line.spec.geometry = ecp::LineGeometry::curved;
        line.curvature = 0.004;
        line.slope = -0.03;
    }
    spec.lines.push_back(line);
    if (noisy) spec.noise = {0.2, 2, 1, 0};
    return spec;
}

int cmdSynth(const std::string& kind, std::uint64_t seed, const std::string& out_dir) {
    json echo{{"command", "synth"}, {"kind", kind}, {"seed", seed}};
    try {
        writeRunConfig(out_dir, echo);
        if (kind == "intersection") {
            ecp::IntersectionScenario sc = ecp::buildIntersectionScenario(seed);
            auto frames = ecp::genSequence(sc.scene, sc.motion, sc.frame_width_px,
                                           sc.frame_height_px);
            ecp::FrameManifest man;
            man.meters_per_pixel = sc.scene.image.meters_per_pixel;
            man.frame_width_px = sc.frame_width_px;
            man.frame_height_px = sc.frame_height_px;
            man.detectable_set_id = sc.map.detectable_sets.front().id;
            man.initial_lane = 1;
            man.free_space_id = sc.map.free_spaces.front().id;
            man.target_lane_id = sc.target_entrance_lane;
            man.map_path = (fs::path(out_dir) / "map.json").string();
            for (size_t i = 0; i < frames.size(); ++i) {
                std::string p = (fs::path(out_dir) / ("frame_" + std::to_string(i) + ".png"))
                                    .string();
                ecp::writePng(p, frames[i]);
                man.frame_paths.push_back(p);
                man.true_poses.push_back(sc.motion[i]);
            }
            std::ofstream mapf(man.map_path);
            mapf << ecp::serializeMap(sc.map);
            ecp::writeManifest((fs::path(out_dir) / "manifest.json").string(), man);
            return kExitOk;
        }
        ecp::SceneSpec spec = basicScene(kind, seed, true);
        if (kind == "stopline") {
            spec = basicScene("solid-straight", seed, true);
            spec.lines[0].y_end_m = 12.0;
            spec.stop_lines.push_back({12.0, 1.0, 7.0, 200.0});
        } else if (kind == "split" || kind == "merge") {
            spec = basicScene("solid-straight", seed, false);
            spec.branch = ecp::BranchLayout{8.0, kind == "split", ecp::LaneSide::right, 20.0, 6.0};
        }
        ecp::Scene scene = ecp::genScene(spec);
        ecp::writePng((fs::path(out_dir) / "scene.png").string(), scene.image);
        json truth;
        truth["polylines"] = json::array();
        for (const auto& poly : scene.truth.polylines) {
            json jp = json::array();
            for (const auto& p : poly) jp.push_back({p.x(), p.y()});
            truth["polylines"].push_back(jp);
        }
        truth["stop_lines"] = json::array();
        for (const auto& [a, b] : scene.truth.stop_lines)
            truth["stop_lines"].push_back({{a.x(), a.y()}, {b.x(), b.y()}});
        std::ofstream tf(fs::path(out_dir) / "truth.json");
        tf << truth.dump(2) << "\n";
    } catch (const ecp::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitInput;
    }
    return kExitOk;
}

int cmdOverlay(const std::string& image_path, const std::string& results_path, double scale,
               const std::string& out_path) {
    try {
        ecp::GrayImage img = ecp::readPngGray(image_path);
        img.meters_per_pixel = scale;
        std::ifstream in(results_path);
        if (!in) throw ecp::Error("cannot open results: " + results_path);
        std::vector<ecp::DetectedLine> lines;
        std::vector<std::vector<Eigen::Vector2d>> guides;
        std::string row;
        while (std::getline(in, row)) {
            if (row.empty()) continue;
            json j = json::parse(row);
            for (const auto& jl : j.value("lines", json::array())) {
                ecp::DetectedLine dl;
                for (const auto& jp : jl.value("polyline", json::array()))
                    dl.polyline_m.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
                if (jl.contains("stop_line")) {
                    ecp::StopLineResult sl;
                    sl.found = true;
                    sl.a_m = {jl["stop_line"]["a"][0].get<double>(),
                              jl["stop_line"]["a"][1].get<double>()};
                    sl.b_m = {jl["stop_line"]["b"][0].get<double>(),
                              jl["stop_line"]["b"][1].get<double>()};
                    dl.stop_line = sl;
                }
                lines.push_back(std::move(dl));
            }
            for (const auto& jg : j.value("guides", json::array())) {
                std::vector<Eigen::Vector2d> g;
                for (const auto& jp : jg) g.push_back({jp.at(0).get<double>(),
                                                       jp.at(1).get<double>()});
                guides.push_back(std::move(g));
            }
        }
        ecp::RgbImage over = ecp::renderOverlay(img, lines, guides);
        ecp::writePng(out_path, over);
    } catch (const ecp::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitInput;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"map-free perception-centered localization toolkit"};
    app.require_subcommand(1);

    std::string map_path, route_path, out_path, out_dir, set_id, config_path;
    std::string manifest_path, kind = "solid-straight", image_path, results_path;
    std::vector<std::string> images;
    double scale = 0.02;
    bool overlay = false;
    std::uint64_t seed = 1;

    auto* validate = app.add_subcommand("validate-map", "parse and validate a topology map");
    validate->add_option("--map", map_path, "map JSON path")->required();

    auto* match = app.add_subcommand("match-nav", "match route turning points to entrance/exit pairs");
    match->add_option("--map", map_path)->required();
    match->add_option("--route", route_path, "route JSON (turning points)")->required();
    match->add_option("--out", out_path, "output file (default stdout)");

    auto* detect = app.add_subcommand("detect", "detect lane lines on BEV images");
    detect->add_option("--map", map_path)->required();
    detect->add_option("--set", set_id, "detectable set id (default: first)");
    detect->add_option("--scale", scale, "meters per pixel")->required();
    detect->add_option("--out", out_dir)->required();
    detect->add_option("--config", config_path, "detector config JSON");
    detect->add_flag("--overlay", overlay, "write overlay PNGs");
    detect->add_option("images", images, "BEV PNG files")->required();

    auto* localize = app.add_subcommand("localize", "run the localization pipeline on a manifest");
    localize->add_option("--manifest", manifest_path)->required();
    localize->add_option("--out", out_dir)->required();
    localize->add_option("--config", config_path);

    auto* synth = app.add_subcommand("synth", "generate synthetic scenes with ground truth");
    synth->add_option("--kind", kind,
                      "solid-straight|dashed-straight|solid-curved|dashed-curved|stopline|split|"
                      "merge|intersection");
    synth->add_option("--seed", seed);
    synth->add_option("--out", out_dir)->required();

    auto* over = app.add_subcommand("overlay", "render detect results onto an image");
    over->add_option("--image", image_path)->required();
    over->add_option("--results", results_path)->required();
    over->add_option("--scale", scale)->required();
    over->add_option("--out", out_path)->required();

    CLI11_PARSE(app, argc, argv);

    if (validate->parsed()) return cmdValidateMap(map_path);
    if (match->parsed()) return cmdMatchNav(map_path, route_path, out_path);
    if (detect->parsed())
        return cmdDetect(images, map_path, set_id, scale, out_dir, overlay, config_path);
    if (localize->parsed()) return cmdLocalize(manifest_path, out_dir, config_path);
    if (synth->parsed()) return cmdSynth(kind, seed, out_dir);
    if (over->parsed()) return cmdOverlay(image_path, results_path, scale, out_path);
    return kExitOk;
}
