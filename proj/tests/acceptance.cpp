// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion is self-contained and uses only public API plus
// the independent oracles in oracles.hpp.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ecp/imageproc.hpp"
#include "ecp/localizer.hpp"
#include "ecp/navmatch.hpp"
#include "ecp/pipeline.hpp"
#include "ecp/synth.hpp"
#include "ecp/topomap.hpp"
#include "map_fixtures.hpp"
#include "oracles.hpp"

namespace {

using namespace ecp;
using Clock = std::chrono::steady_clock;

double secondsSince(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    bool skipped = false;
    std::string detail;
};

// x of a roughly vertical polyline at height y (linear interpolation)
double polyX(const std::vector<Eigen::Vector2d>& poly, double y) {
    for (size_t i = 1; i < poly.size(); ++i) {
        double y0 = poly[i - 1].y(), y1 = poly[i].y();
        if ((y >= y0 && y <= y1) || (y <= y0 && y >= y1)) {
            double t = std::fabs(y1 - y0) < 1e-12 ? 0.0 : (y - y0) / (y1 - y0);
            return poly[i - 1].x() + t * (poly[i].x() - poly[i - 1].x());
        }
    }
    const Eigen::Vector2d &a = poly.front(), &b = poly.back();
    double t = std::fabs(b.y() - a.y()) < 1e-12 ? 0.0 : (y - a.y()) / (b.y() - a.y());
    return a.x() + t * (b.x() - a.x());
}

double polyDir(const std::vector<Eigen::Vector2d>& poly) {
    Eigen::Vector2d v = poly.back() - poly.front();
    return rad2deg(std::atan2(v.y(), v.x()));
}

double ySpan(const std::vector<Eigen::Vector2d>& poly) {
    double lo = poly.front().y(), hi = lo;
    for (const auto& p : poly) {
        lo = std::min(lo, p.y());
        hi = std::max(hi, p.y());
    }
    return hi - lo;
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion1() {
    // external-dataset reproduction is optional; run only when the data is
    // provided alongside the binary or via KITTI_DIR
    const char* env = std::getenv("KITTI_DIR");
    std::vector<std::string> candidates = {"data/kitti", "../data/kitti"};
    if (env) candidates.insert(candidates.begin(), env);
    for (const auto& c : candidates)
        if (std::filesystem::exists(c))
            return {false, false, "dataset found at " + c + " but no evaluation harness bound"};
    return {true, true, "dataset not present"};
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion2() {
    auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    const double angles[] = {0.0, 30.0, 45.0, 90.0};
    for (int i = 0; i < 1000; ++i) {
        BinaryImage img = oracle::randomBinary(rng, 32, 32, 0.55);
        double angle = angles[i % 4];
        BinaryImage got = directionalErode(img, angle);
        BinaryImage want = oracle::erodeBruteForce(img, erosionElement(angle));
        if (!(got == want))
            return {false, false, "mismatch at instance " + std::to_string(i)};
    }
    double dt = secondsSince(t0);
    if (dt >= 5.0) return {false, false, "took " + std::to_string(dt) + " s (budget 5 s)"};
    char buf[64];
    std::snprintf(buf, sizeof buf, "1000 images exact, %.2f s", dt);
    return {true, false, buf};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion3() {
    auto t0 = Clock::now();
    std::mt19937_64 rng(1002);
    std::uniform_real_distribution<double> lat(47.99, 48.01), lon(10.99, 11.01), dir(0.0, 360.0);
    for (int i = 0; i < 500; ++i) {
        int n_pairs = 1 + static_cast<int>(rng() % 99);
        TopologyMap map = fixtures::randomMap(rng, n_pairs);
        TurningPoint t{lat(rng), lon(rng), dir(rng), dir(rng)};

        // exhaustive argmin; set iteration is lexicographic, so strict < on
        // (f, g, h) keeps the lexicographically smallest pair among ties
        std::string best_e, best_x;
        double best_f = 0, best_g = 0, best_h = 0;
        bool first = true;
        for (const auto& [eid, xid] : map.legal_pairs) {
            double f, g, h;
            oracle::scoreFormula(t, *map.findPoint(eid), *map.findPoint(xid), f, g, h);
            if (first || f < best_f || (f == best_f && (g < best_g || (g == best_g && h < best_h)))) {
                best_e = eid;
                best_x = xid;
                best_f = f;
                best_g = g;
                best_h = h;
                first = false;
            }
        }
        MatchResult got = matchTurningPoint(map, t);
        if (got.entry_id != best_e || got.exit_id != best_x ||
            std::fabs(got.f - best_f) > 1e-9 * std::max(1.0, best_f))
            return {false, false, "mismatch at instance " + std::to_string(i) + ": got (" +
                                      got.entry_id + "," + got.exit_id + ") want (" + best_e +
                                      "," + best_x + ")"};
    }
    double dt = secondsSince(t0);
    if (dt >= 1.0) return {false, false, "took " + std::to_string(dt) + " s (budget 1 s)"};
    char buf[64];
    std::snprintf(buf, sizeof buf, "500 instances exact, %.3f s", dt);
    return {true, false, buf};
}

// ---------------------------------------------------------------- criterion 4

constexpr double kMpp = 0.02;

SceneSpec lineSceneSpec(std::uint64_t seed) {
    SceneSpec sp;
    sp.seed = seed;
    sp.width_m = 8.0;
    sp.height_m = 16.0;
    sp.meters_per_pixel = kMpp;
    return sp;
}

NoiseProfile moderateNoise() {
    NoiseProfile n;
    n.speckle_density = 0.2;
    n.shadow_bands = 2;
    n.occluders = 1;
    return n;
}

LineSpec specFor(bool dashed, bool curved) {
    LineSpec s;
    s.geometry = curved ? LineGeometry::curved : LineGeometry::straight;
    s.continuity = dashed ? LineContinuity::dashed : LineContinuity::solid;
    if (dashed) {
        s.dash_segment_length_m = 3.0;
        s.dash_interval_m = 6.0;
    }
    return s;
}

DetectStart startOn(const Scene& scene) {
    const auto& poly = scene.truth.polylines[0];
    double y0 = 0.6;
    if (!scene.truth.dash_marks[0].empty()) y0 = scene.truth.dash_marks[0].front().first + 0.5;
    DetectStart st;
    st.point_m = {polyX(poly, y0), y0};
    double y1 = y0 + 1.5;
    st.direction_deg = rad2deg(std::atan2(y1 - y0, polyX(poly, y1) - st.point_m.x()));
    return st;
}

Outcome criterion4() {
    auto t0 = Clock::now();
    std::mt19937_64 rng(1004);
    std::uniform_real_distribution<double> ux(3.2, 4.8), uslope(-0.08, 0.08), ucurv(-0.003, 0.003);

    int detected = 0, total = 0, gate_violations = 0;
    double sq_sum = 0;
    long n_err = 0;
    for (int kind = 0; kind < 4; ++kind) {
        bool dashed = kind & 1, curved = kind & 2;
        for (int i = 0; i < 50; ++i) {
            SceneSpec sp = lineSceneSpec(9000 + kind * 50 + i);
            sp.noise = moderateNoise();
            LineLayout l;
            l.x0_m = ux(rng);
            l.slope = uslope(rng);
            l.curvature = curved ? ucurv(rng) : 0.0;
            l.spec = specFor(dashed, curved);
            sp.lines = {l};
            Scene scene = genScene(sp);

            DetectorConfig cfg = configForSpec(l.spec);
            cfg.probe_split_merge = false;
            cfg.probe_stop_line = false;
            DetectedLine det = detectLine(scene.image, startOn(scene), l.spec, cfg);
            ++total;

            const auto& truth = scene.truth.polylines[0];
            double truth_span = ySpan(truth);
            if (det.polyline_m.size() < 2 || ySpan(det.polyline_m) < 0.7 * truth_span) continue;
            ++detected;

            for (const auto& p : det.polyline_m) {
                double e = p.x() - polyX(truth, p.y());
                sq_sum += e * e;
                ++n_err;
            }
            double prev_or = det.windows.empty() ? 0.0 : det.windows[0].region.orientation_deg;
            for (const auto& w : det.windows) {
                if (std::fabs(angleDelta(prev_or, w.region.orientation_deg)) >
                    cfg.turn_limit_deg + 1e-6)
                    ++gate_violations;
                prev_or = w.region.orientation_deg;
            }
        }
    }
    double recall = static_cast<double>(detected) / total;
    double rms_px = n_err ? std::sqrt(sq_sum / n_err) / kMpp : 1e9;
    double dt = secondsSince(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "recall %.3f, lateral rms %.2f px, %d gate violations, %.1f s",
                  recall, rms_px, gate_violations, dt);
    bool ok = recall >= 0.90 && rms_px <= 1.5 && gate_violations == 0 && dt < 60.0;
    return {ok, false, buf};
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion5() {
    std::mt19937_64 rng(1005);
    std::uniform_real_distribution<double> ux(3.0, 5.0), uslope(-0.05, 0.05), uend(9.0, 12.0);

    int hits = 0, fps = 0;
    double worst_err = 0;
    for (int control = 0; control < 2; ++control) {
        for (int i = 0; i < 50; ++i) {
            SceneSpec sp = lineSceneSpec(9500 + control * 50 + i);
            LineLayout l;
            l.x0_m = ux(rng);
            l.slope = uslope(rng);
            l.y_end_m = uend(rng);
            sp.lines = {l};
            if (!control) {
                StopLineLayout bar;
                bar.y_m = l.y_end_m;
                double xe = l.x0_m + l.slope * l.y_end_m;
                bar.x_start_m = xe - 3.0;
                bar.x_end_m = xe + 3.0;
                sp.stop_lines = {bar};
            }
            Scene scene = genScene(sp);
            DetectorConfig cfg = configForSpec(l.spec);
            DetectedLine det = detectLine(scene.image, startOn(scene), l.spec, cfg);
            bool found = det.stop_line && det.stop_line->found;
            if (control) {
                if (found) ++fps;
                continue;
            }
            if (!found) continue;
            double y_meas = 0.5 * (det.stop_line->a_m.y() + det.stop_line->b_m.y());
            double err = std::fabs(y_meas - l.y_end_m);
            worst_err = std::max(worst_err, err);
            if (err <= 2.0 * kMpp) ++hits;
        }
    }
    char buf[120];
    std::snprintf(buf, sizeof buf, "detection %d/50 (worst err %.2f px), false positives %d/50",
                  hits, worst_err / kMpp, fps);
    return {hits >= 48 && fps <= 2, false, buf};
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion6() {
    std::mt19937_64 rng(1006);
    std::uniform_real_distribution<double> ubr(6.0, 9.0), udep(15.0, 25.0);

    int clean_ok = 0, noisy_ok = 0;
    for (int noisy = 0; noisy < 2; ++noisy) {
        for (int i = 0; i < 40; ++i) {
            SceneSpec sp = lineSceneSpec(9700 + noisy * 40 + i);
            if (noisy) sp.noise = moderateNoise();
            LineLayout l;
            l.x0_m = 4.0;
            sp.lines = {l};
            BranchLayout br;
            br.y_branch_m = ubr(rng);
            br.departure_deg = udep(rng);
            br.split = (i % 4) < 2;
            br.side = (i % 2) ? LaneSide::left : LaneSide::right;
            sp.branch = br;
            Scene scene = genScene(sp);

            DetectorConfig cfg = configForSpec(l.spec);
            DetectedLine det = detectLine(scene.image, startOn(scene), l.spec, cfg);
            const SplitMergeTruth& truth = scene.truth.events[0];
            bool ok = det.event && det.event->split == truth.split && det.event->side == truth.side;
            (noisy ? noisy_ok : clean_ok) += ok ? 1 : 0;
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "noise-free %d/40, moderate noise %d/40", clean_ok, noisy_ok);
    return {clean_ok == 40 && noisy_ok >= 36, false, buf};
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion7() {
    // one free space: a stop bar (direction 0) and a lane line (direction 90)
    FreeSpace fs;
    fs.id = "F";
    fs.features.push_back({FeatureKind::stop_line, {12.0, 16.0, 0.0}, ""});
    fs.features.push_back({FeatureKind::lane_line, {12.0, 8.0, 90.0}, ""});

    SceneSpec sp;
    sp.seed = 77;
    sp.width_m = 24.0;
    sp.height_m = 24.0;
    sp.meters_per_pixel = kMpp;
    LineLayout l;
    l.x0_m = 12.0;
    l.y_end_m = 16.0;
    sp.lines = {l};
    StopLineLayout bar;
    bar.y_m = 16.0;
    bar.x_start_m = 6.0;
    bar.x_end_m = 18.0;
    sp.stop_lines = {bar};
    Scene scene = genScene(sp);

    TopologyMap empty_map;
    const Pose2 nominal{0.0, -8.0, 0.0};  // scene frame (first feature pose)
    std::mt19937_64 rng(1007);
    std::uniform_real_distribution<double> ud(-2.0, 2.0), uth(-20.0, 20.0);

    LineSpec solid;
    DetectorConfig cfg = configForSpec(solid);
    cfg.turn_limit_deg = 25.0;  // search tolerance covers the prior uncertainty

    double worst_t = 0, worst_h = 0;
    for (int i = 0; i < 100; ++i) {
        double dx = ud(rng), dy = ud(rng), dth = uth(rng);
        Pose2 world{12.0 + dx, 8.0 + dy, 90.0 + dth};
        GrayImage frame = genSequence(scene, {world}, 500, 600)[0];
        const Eigen::Vector2d v = vehicleInFrame(frame);

        std::vector<MatchedFeature> feats;
        for (int fi = 0; fi < 2; ++fi) {
            double want_dir = fi == 0 ? 0.0 : 90.0;
            auto results = detectSpecialLines(frame, want_dir, solid, cfg);
            const DetectedLine* best = nullptr;
            for (const auto& r : results)
                if (lineAngleDiff(polyDir(r.polyline_m), want_dir) < 30.0 &&
                    (!best || r.length() > best->length()))
                    best = &r;
            if (!best) continue;
            MatchedFeature m;
            m.kind = fs.features[static_cast<size_t>(fi)].kind;
            m.feature_index = fi;
            m.point_v = 0.5 * (best->polyline_m.front() + best->polyline_m.back()) - v;
            double dir = polyDir(best->polyline_m);
            if (angleDiff(dir, want_dir) > 90.0) dir += 180.0;
            m.direction_deg = wrap360(dir);
            feats.push_back(m);
        }
        if (feats.size() != 2) return {false, false, "line lost at instance " + std::to_string(i)};

        RebuiltScene rb = rebuildScene(buildAnchors(feats, fs), fs, nominal);
        Pose2 truth{dx, dy - 8.0, dth};
        double te = std::hypot(rb.vehicle.x - truth.x, rb.vehicle.y - truth.y);
        double he = std::fabs(angleDelta(rb.vehicle.heading_deg, truth.heading_deg));
        worst_t = std::max(worst_t, te);
        worst_h = std::max(worst_h, he);
        if (te > 0.5 * kMpp || he > 0.5)
            return {false, false, "instance " + std::to_string(i) + ": translation " +
                                      std::to_string(te / kMpp) + " px, heading " +
                                      std::to_string(he) + " deg"};
    }

    // equivariance on exact inputs: synthetic features, no imagery
    std::uniform_real_distribution<double> upos(-10.0, 10.0), uang(0.0, 360.0);
    for (int i = 0; i < 100; ++i) {
        FreeSpace rfs;
        rfs.id = "R";
        double d0 = uang(rng);
        double d1 = d0 + 30.0 + uang(rng) / 360.0 * 120.0;
        rfs.features.push_back({FeatureKind::stop_line, {upos(rng), upos(rng), d0}, ""});
        rfs.features.push_back({FeatureKind::lane_line, {upos(rng), upos(rng), wrap360(d1)}, ""});
        Pose2 truth{upos(rng), upos(rng), uang(rng) - 180.0};

        std::vector<MatchedFeature> feats;
        for (int fi = 0; fi < 2; ++fi) {
            Pose2 q = featureInScene(rfs, rfs.features[static_cast<size_t>(fi)]);
            MatchedFeature m;
            m.kind = rfs.features[static_cast<size_t>(fi)].kind;
            m.feature_index = fi;
            // any point on the carrier line is a valid observation
            m.point_v = truth.toLocal(q.position() + ud(rng) * unitVector(q.heading_deg));
            m.direction_deg = wrap360(q.heading_deg - truth.heading_deg);
            feats.push_back(m);
        }
        Pose2 rough{truth.x + ud(rng) / 4.0, truth.y + ud(rng) / 4.0, truth.heading_deg + uth(rng) / 4.0};
        RebuiltScene rb = rebuildScene(buildAnchors(feats, rfs), rfs, rough);
        double te = std::hypot(rb.vehicle.x - truth.x, rb.vehicle.y - truth.y);
        double he = std::fabs(angleDelta(rb.vehicle.heading_deg, truth.heading_deg));
        if (te > 1e-6 || he > 1e-6)
            return {false, false, "equivariance broke at instance " + std::to_string(i)};
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "worst translation %.2f px, worst heading %.3f deg",
                  worst_t / kMpp, worst_h);
    return {true, false, buf};
}

// ------------------------------------------------------- criteria 8 and 9

Outcome criterion8() {
    auto t0 = Clock::now();
    IntersectionScenario sc = buildIntersectionScenario(42, 100);
    std::vector<GrayImage> frames =
        genSequence(sc.scene, sc.motion, sc.frame_width_px, sc.frame_height_px);
    PipelineConfig cfg;
    auto records = runLocalize(sc.map, frames, "DS_NS", 1, "FS1", sc.target_entrance_lane, cfg);
    double dt = secondsSince(t0);

    // mode sequence: cruising+, turning+, cruising+
    size_t i = 0, n = records.size();
    while (i < n && records[i].state.mode == Mode::cruising) ++i;
    size_t turn_begin = i;
    while (i < n && records[i].state.mode == Mode::turning) ++i;
    size_t turn_end = i;
    while (i < n && records[i].state.mode == Mode::cruising) ++i;
    bool seq_ok = turn_begin > 0 && turn_end > turn_begin && turn_end < n && i == n;

    const FreeSpace* fs = sc.map.findFreeSpace("FS1");
    Pose2 frame0 = sceneFrame(*fs);
    double sq = 0;
    long cnt = 0;
    for (size_t f = turn_begin; f < turn_end; ++f) {
        if (!records[f].state.pose) continue;
        Eigen::Vector2d truth = frame0.toLocal(sc.motion[f].position());
        sq += (records[f].state.pose->position() - truth).squaredNorm();
        ++cnt;
    }
    double rms = cnt ? std::sqrt(sq / cnt) : 1e9;
    const VehicleState& last = records.back().state;
    bool final_ok = last.mode == Mode::cruising && last.detectable_set_id == "DS_EW" &&
                    last.lane_number == sc.map.laneNumber(sc.target_entrance_lane);

    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "modes %s, turn frames %zu..%zu, pose rms %.2f px, final %s lane %d, %.1f s",
                  seq_ok ? "ok" : "WRONG", turn_begin, turn_end - 1, rms / 0.05,
                  last.detectable_set_id.c_str(), last.lane_number, dt);
    bool ok = seq_ok && final_ok && rms <= 3.0 * 0.05 && dt < 10.0;
    return {ok, false, buf};
}

Outcome criterion9() {
    // detect twice on a noisy scene
    SceneSpec sp = lineSceneSpec(321);
    sp.noise = moderateNoise();
    LineLayout l;
    l.x0_m = 4.0;
    l.spec = specFor(true, false);
    sp.lines = {l};
    std::string detect_dumps[2];
    for (int run = 0; run < 2; ++run) {
        Scene scene = genScene(sp);
        DetectorConfig cfg = configForSpec(l.spec);
        DetectedLine det = detectLine(scene.image, startOn(scene), l.spec, cfg);
        detect_dumps[run] = detectRecord("frame0", {det}).dump();
    }
    if (detect_dumps[0] != detect_dumps[1]) return {false, false, "detect output differs"};

    // localize twice across the intersection
    std::string loc_dumps[2];
    for (int run = 0; run < 2; ++run) {
        IntersectionScenario sc = buildIntersectionScenario(7, 40);
        std::vector<GrayImage> frames =
            genSequence(sc.scene, sc.motion, sc.frame_width_px, sc.frame_height_px);
        PipelineConfig cfg;
        auto records = runLocalize(sc.map, frames, "DS_NS", 1, "FS1", sc.target_entrance_lane, cfg);
        std::string all;
        for (const auto& r : records) all += stateRecord(r).dump() + "\n";
        loc_dumps[run] = all;
    }
    if (loc_dumps[0] != loc_dumps[1]) return {false, false, "localize output differs"};
    return {true, false, "detect and localize byte-identical"};
}

// ---------------------------------------------------------------- criterion 10

Outcome criterion10() {
    SceneSpec sp = lineSceneSpec(654);
    LineLayout a, b, c, d;
    a.x0_m = 1.2;
    b.x0_m = 3.2;
    b.spec = specFor(true, false);
    c.x0_m = 5.2;
    d.x0_m = 7.2;
    d.spec.is_curb = true;
    sp.lines = {a, b, c, d};
    Scene scene = genScene(sp);

    std::vector<double> times;
    for (int run = 0; run < 11; ++run) {
        auto t0 = Clock::now();
        for (int li = 0; li < 4; ++li) {
            const LineSpec& spec = sp.lines[static_cast<size_t>(li)].spec;
            DetectorConfig cfg = configForSpec(spec);
            const auto& poly = scene.truth.polylines[static_cast<size_t>(li)];
            double y0 = 0.6;
            if (!scene.truth.dash_marks[static_cast<size_t>(li)].empty())
                y0 = scene.truth.dash_marks[static_cast<size_t>(li)].front().first + 0.5;
            DetectStart st;
            st.point_m = {polyX(poly, y0), y0};
            st.direction_deg = 90.0;
            DetectedLine det = detectLine(scene.image, st, spec, cfg);
            if (det.polyline_m.size() < 2) return {false, false, "detection failed"};
        }
        times.push_back(secondsSince(t0) * 1000.0);
    }
    std::sort(times.begin(), times.end());
    double median = times[times.size() / 2];
    char buf[64];
    std::snprintf(buf, sizeof buf, "median %.1f ms over 11 runs", median);
    return {median <= 50.0, false, buf};
}

}  // namespace

int main() {
    struct Entry {
        int number;
        const char* name;
        Outcome (*fn)();
    };
    const Entry entries[] = {
        {1, "external dataset reproduction", criterion1},
        {2, "directional erosion matches brute force", criterion2},
        {3, "turning-point match equals exhaustive argmin", criterion3},
        {4, "line recall and lateral accuracy under noise", criterion4},
        {5, "stop-line detection and control false positives", criterion5},
        {6, "split/merge classification", criterion6},
        {7, "pose recovery and equivariance", criterion7},
        {8, "intersection crossing end to end", criterion8},
        {9, "determinism across runs", criterion9},
        {10, "single-frame detection latency", criterion10},
    };
    int failures = 0;
    for (const auto& e : entries) {
        Outcome o;
        try {
            o = e.fn();
        } catch (const std::exception& ex) {
            o = {false, false, std::string("exception: ") + ex.what()};
        }
        const char* tag = o.pass ? (o.skipped ? "SKIP" : "PASS") : "FAIL";
        std::printf("[%s] criterion %2d: %s (%s)\n", tag, e.number, e.name, o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
