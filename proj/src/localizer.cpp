#include "ecp/localizer.hpp"

#include <algorithm>
#include <cmath>

namespace ecp {

namespace {

bool sameType(const LineSpec& a, const LineSpec& b) {
    return a.continuity == b.continuity && a.is_curb == b.is_curb;
}

// nearest observation on each side of the vehicle, non-curb preferred for
// the ego-line roles only when a curb is not the actual boundary there
const ObservedLine* nearestSide(const std::vector<ObservedLine>& detections, bool left) {
    const ObservedLine* best = nullptr;
    for (const auto& d : detections) {
        if (left ? d.lateral_offset_m >= 0 : d.lateral_offset_m <= 0) continue;
        if (!best || std::fabs(d.lateral_offset_m) < std::fabs(best->lateral_offset_m)) best = &d;
    }
    return best;
}

bool saneWidth(double w) { return w > 2.0 && w < 6.0; }

}  // namespace

std::string toString(Mode m) { return m == Mode::cruising ? "cruising" : "turning"; }

std::string toString(TurnPhase p) {
    switch (p) {
        case TurnPhase::exiting_lane: return "exiting_lane";
        case TurnPhase::in_free_space: return "in_free_space";
        case TurnPhase::entering_target: return "entering_target";
    }
    return "exiting_lane";
}

Pose2 sceneFrame(const FreeSpace& fs) {
    if (fs.features.empty()) throw Error("scene_frame: free space has no features");
    return fs.features.front().pose;
}

Pose2 featureInScene(const FreeSpace& fs, const FreeSpaceFeature& f) {
    const Pose2 frame = sceneFrame(fs);
    Eigen::Vector2d p = frame.toLocal(f.pose.position());
    return {p.x(), p.y(), wrap360(f.pose.heading_deg - frame.heading_deg)};
}

VehicleState initState(const TopologyMap& map, const std::string& detectable_set_id,
                       int lane_number) {
    const DetectableLaneSet* set = map.findDetectableSet(detectable_set_id);
    if (!set) throw Error("init_state: unknown detectable set " + detectable_set_id);
    if (lane_number < 1 || lane_number > static_cast<int>(set->lane_ids.size()))
        throw Error("init_state: lane number out of range for set " + detectable_set_id);
    VehicleState s;
    s.mode = Mode::cruising;
    s.detectable_set_id = detectable_set_id;
    s.lane_number = lane_number;
    s.lane_width_m = set->default_lane_width_m;
    s.lane_width_rule = 4;
    return s;
}

std::pair<double, int> resolveLaneWidth(const std::vector<ObservedLine>& detections,
                                        const DetectableLaneSet& set, const VehicleState&) {
    // rule 1: the two lines bracketing the vehicle
    const ObservedLine* l = nearestSide(detections, true);
    const ObservedLine* r = nearestSide(detections, false);
    if (l && r) {
        double w = r->lateral_offset_m - l->lateral_offset_m;
        if (saneWidth(w)) return {w, 1};
    }
    // rule 2: any other adjacent pair in the same set
    std::vector<double> offsets;
    for (const auto& d : detections) offsets.push_back(d.lateral_offset_m);
    std::sort(offsets.begin(), offsets.end());
    for (size_t i = 1; i < offsets.size(); ++i) {
        double w = offsets[i] - offsets[i - 1];
        if (saneWidth(w)) return {w, 2};
    }
    // rule 3: only the two outer curbs seen, divide equally
    if (detections.size() == 2 && detections[0].spec.is_curb && detections[1].spec.is_curb &&
        !set.lane_ids.empty()) {
        double d = std::fabs(detections[0].lateral_offset_m - detections[1].lateral_offset_m);
        return {d / static_cast<double>(set.lane_ids.size()), 3};
    }
    return {set.default_lane_width_m, 4};
}

VehicleState updateCruise(const VehicleState& state, const std::vector<ObservedLine>& detections,
                          const TopologyMap& map) {
    if (state.mode != Mode::cruising) throw Error("update_cruise: state is not cruising");
    const DetectableLaneSet* set = map.findDetectableSet(state.detectable_set_id);
    if (!set) throw Error("update_cruise: unknown detectable set " + state.detectable_set_id);

    VehicleState next = state;
    next.lane_consistent = true;

    const ObservedLine* obs_l = nearestSide(detections, true);
    const ObservedLine* obs_r = nearestSide(detections, false);

    auto laneMatches = [&](int lane_no) {
        const std::string& lane_id = set->lane_ids[static_cast<size_t>(lane_no - 1)];
        if (obs_l && !sameType(querySideSpec(map, lane_id, LaneSide::left), obs_l->spec))
            return false;
        if (obs_r && !sameType(querySideSpec(map, lane_id, LaneSide::right), obs_r->spec))
            return false;
        return obs_l || obs_r;
    };

    if (obs_l || obs_r) {
        if (!laneMatches(next.lane_number)) {
            int found = 0;
            // prefer the nearest consistent lane number
            for (int d = 1; d < static_cast<int>(set->lane_ids.size()) && !found; ++d)
                for (int cand : {next.lane_number - d, next.lane_number + d}) {
                    if (cand < 1 || cand > static_cast<int>(set->lane_ids.size())) continue;
                    if (laneMatches(cand)) {
                        found = cand;
                        break;
                    }
                }
            if (found)
                next.lane_number = found;
            else
                next.lane_consistent = false;
        }
    }

    // a detected curb pins the lane number by counting lines in between
    for (const auto& curb : detections) {
        if (!curb.spec.is_curb) continue;
        int between = 0;
        for (const auto& d : detections) {
            if (&d == &curb || d.spec.is_curb) continue;
            if (curb.lateral_offset_m > 0 ? (d.lateral_offset_m > 0 &&
                                             d.lateral_offset_m < curb.lateral_offset_m)
                                          : (d.lateral_offset_m < 0 &&
                                             d.lateral_offset_m > curb.lateral_offset_m))
                ++between;
        }
        next.lane_number = between + 1;
        break;
    }
    next.lane_number = std::clamp(next.lane_number, 1, static_cast<int>(set->lane_ids.size()));

    auto [w, rule] = resolveLaneWidth(detections, *set, next);
    next.lane_width_m = w;
    next.lane_width_rule = rule;

    next.lane_ending = false;
    for (const auto& d : detections)
        if (d.ending != LaneEnding::open) next.lane_ending = true;
    return next;
}

std::vector<MatchedFeature> matchFeatures(const std::vector<MatchedFeature>& observations,
                                          const FreeSpace& fs, const Pose2& pose_guess) {
    std::vector<MatchedFeature> out = observations;
    std::vector<char> used(fs.features.size(), 0);
    for (auto& obs : out) {
        if (obs.feature_index >= 0) {
            if (obs.feature_index < static_cast<int>(fs.features.size()))
                used[static_cast<size_t>(obs.feature_index)] = 1;
            continue;
        }
        int best = -1;
        double best_d = 1e18;
        for (size_t i = 0; i < fs.features.size(); ++i) {
            if (used[i]) continue;
            const FreeSpaceFeature& f = fs.features[i];
            if (f.kind != obs.kind) continue;
            Pose2 in_scene = featureInScene(fs, f);
            Eigen::Vector2d pred_v = pose_guess.toLocal(in_scene.position());
            double pred_dir = in_scene.heading_deg - pose_guess.heading_deg;
            double d;
            if (obs.is_line) {
                if (lineAngleDiff(pred_dir, obs.direction_deg) > 20.0) continue;
                // perpendicular distance from the observed carrier line
                Eigen::Vector2d u = unitVector(obs.direction_deg);
                Eigen::Vector2d n(-u.y(), u.x());
                d = std::fabs((pred_v - obs.point_v).dot(n));
            } else {
                d = (pred_v - obs.point_v).norm();
            }
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0 && best_d < 5.0) {
            obs.feature_index = best;
            used[static_cast<size_t>(best)] = 1;
        }
    }
    return out;
}

std::vector<Anchor> buildAnchors(const std::vector<MatchedFeature>& features,
                                 const FreeSpace& fs) {
    std::vector<Anchor> anchors;
    std::vector<const MatchedFeature*> lines;
    for (const auto& f : features) {
        if (f.feature_index < 0 || f.feature_index >= static_cast<int>(fs.features.size()))
            continue;
        if (f.is_line)
            lines.push_back(&f);
        else
            anchors.push_back({false, f, {}});
    }
    for (size_t i = 0; i < lines.size(); ++i)
        for (size_t j = i + 1; j < lines.size(); ++j) {
            if (lines[i]->feature_index == lines[j]->feature_index) continue;
            if (lineAngleDiff(lines[i]->direction_deg, lines[j]->direction_deg) < 20.0) continue;
            anchors.push_back({true, *lines[i], *lines[j]});
        }
    return anchors;
}

RebuiltScene rebuildScene(const std::vector<Anchor>& anchors, const FreeSpace& fs,
                          const std::optional<Pose2>& previous,
                          const std::string& target_lane_id) {
    RebuiltScene scene;
    for (const auto& f : fs.features) {
        FreeSpaceFeature g = f;
        g.pose = featureInScene(fs, f);
        scene.features.push_back(g);
        if (!scene.target_entrance && !target_lane_id.empty() && f.lane_id == target_lane_id)
            scene.target_entrance = g.pose;
    }

    // unique constraints, keyed by feature index
    std::vector<const MatchedFeature*> feats;
    auto add = [&](const MatchedFeature& m) {
        for (const auto* f : feats)
            if (f->feature_index == m.feature_index) return;
        feats.push_back(&m);
    };
    bool any_strong = false;
    for (const auto& a : anchors) {
        add(a.a);
        if (a.strong) {
            add(a.b);
            any_strong = true;
        }
    }

    if (feats.empty()) {
        if (!previous) throw Error("rebuild_scene: no anchors and no previous pose");
        scene.vehicle = *previous;
        scene.degraded = true;
        return scene;
    }

    double heading;
    if (any_strong) {
        // circular mean over doubled line-angle residuals handles the mod-180
        double sx = 0, sy = 0;
        for (const auto* f : feats) {
            if (!f->is_line) continue;
            double map_dir = scene.features[static_cast<size_t>(f->feature_index)].pose.heading_deg;
            double delta = map_dir - f->direction_deg;
            sx += std::cos(2.0 * deg2rad(delta));
            sy += std::sin(2.0 * deg2rad(delta));
        }
        heading = 0.5 * rad2deg(std::atan2(sy, sx));
        // mod-180 ambiguity: stay near the previous heading when known
        double ref = previous ? previous->heading_deg : 90.0;
        if (angleDiff(heading, ref) > angleDiff(heading + 180.0, ref)) heading += 180.0;
        heading = wrap360(heading);
    } else {
        if (!previous) throw Error("rebuild_scene: weak anchors alone cannot fix heading");
        heading = previous->heading_deg;
    }

    Eigen::Rotation2Dd rot(deg2rad(heading));
    Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
    for (const auto* f : feats) {
        const Pose2& q = scene.features[static_cast<size_t>(f->feature_index)].pose;
        Eigen::Vector2d rp = rot * f->point_v;
        if (f->is_line) {
            Eigen::Vector2d n = unitVector(q.heading_deg + 90.0);
            A += n * n.transpose();
            b += n * n.dot(q.position() - rp);
        } else {
            A += Eigen::Matrix2d::Identity();
            b += q.position() - rp;
        }
    }
    if (std::fabs(A.determinant()) < 1e-9) {
        if (!previous) throw Error("rebuild_scene: constraints do not fix the position");
        // keep the unconstrained direction from the previous position
        Eigen::Vector2d t = A.colPivHouseholderQr().solve(b);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(A);
        Eigen::Vector2d null_dir = es.eigenvectors().col(0);
        Eigen::Vector2d prev(previous->x, previous->y);
        t += null_dir * null_dir.dot(prev - t);
        scene.vehicle = {t.x(), t.y(), heading};
    } else {
        Eigen::Vector2d t = A.ldlt().solve(b);
        scene.vehicle = {t.x(), t.y(), heading};
    }
    return scene;
}

VehicleState stepFreeSpace(const VehicleState& state, const TurnInput& input,
                           const TopologyMap& map) {
    if (state.mode != Mode::turning) throw Error("step_free_space: state is not turning");
    const FreeSpace* fs = map.findFreeSpace(state.free_space_id);
    if (!fs) throw Error("step_free_space: unknown free space " + state.free_space_id);

    VehicleState next = state;

    // dead reckoning prediction
    std::optional<Pose2> pred = state.pose;
    if (pred && state.last_delta) *pred = pred->compose(*state.last_delta);

    std::vector<MatchedFeature> matched = input.features;
    if (pred) matched = matchFeatures(matched, *fs, *pred);
    auto anchors = buildAnchors(matched, *fs);

    RebuiltScene scene = rebuildScene(anchors, *fs, pred, state.target_lane_id);
    if (scene.degraded) {
        next.frames_without_anchor += 1;
        if (next.frames_without_anchor > kMaxAnchorlessFrames) next.degraded = true;
    } else {
        next.frames_without_anchor = 0;
        next.degraded = false;
        if (state.pose) {
            // vehicle-frame delta for the next prediction
            Eigen::Vector2d d = state.pose->toLocal(scene.vehicle.position());
            next.last_delta = {d.x(), d.y(),
                               angleDelta(state.pose->heading_deg, scene.vehicle.heading_deg)};
        }
    }
    next.pose = scene.vehicle;

    // phase machine
    bool has_strong = std::any_of(anchors.begin(), anchors.end(),
                                  [](const Anchor& a) { return a.strong; });
    if (next.phase == TurnPhase::exiting_lane && has_strong)
        next.phase = TurnPhase::in_free_space;
    if (next.phase == TurnPhase::in_free_space && scene.target_entrance) {
        double dist = (scene.vehicle.position() - scene.target_entrance->position()).norm();
        if (dist < 5.0) next.phase = TurnPhase::entering_target;
    }
    if (input.target_set_detected) {
        const Lane* lane = map.findLane(state.target_lane_id);
        next.mode = Mode::cruising;
        next.phase = TurnPhase::exiting_lane;
        next.pose.reset();
        next.last_delta.reset();
        next.lane_ending = false;
        if (lane) {
            next.detectable_set_id = lane->detectable_set_id;
            next.lane_number = map.laneNumber(lane->id);
        } else {
            next.lane_number = input.target_lane_number;
        }
        const DetectableLaneSet* set = map.findDetectableSet(next.detectable_set_id);
        if (set) {
            next.lane_width_m = set->default_lane_width_m;
            next.lane_width_rule = 4;
        }
    }
    return next;
}

}  // namespace ecp
