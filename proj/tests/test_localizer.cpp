#include <doctest.h>

#include <cmath>
#include <random>

#include "ecp/localizer.hpp"
#include "map_fixtures.hpp"

using namespace ecp;

namespace {

ObservedLine obs(double lateral, LineSpec spec, LaneEnding ending = LaneEnding::open) {
    ObservedLine o;
    o.lateral_offset_m = lateral;
    o.spec = spec;
    o.ending = ending;
    o.direction_deg = 90.0;
    o.length_m = 10.0;
    return o;
}

// free space whose frame is the identity: first feature sits at the origin
FreeSpace crossSpace() {
    FreeSpace fs;
    fs.id = "F1";
    fs.features.push_back({FeatureKind::stop_line, {0.0, 0.0, 0.0}, "L1"});
    fs.features.push_back({FeatureKind::lane_line, {3.0, 0.0, 90.0}, "L1"});
    fs.features.push_back({FeatureKind::lane_line, {0.0, 6.0, 0.0}, "L2"});
    fs.features.push_back({FeatureKind::sign, {-2.0, 4.0, 0.0}, ""});
    return fs;
}

// observation of feature i of `fs` as seen from vehicle pose `truth`
MatchedFeature seen(const FreeSpace& fs, int i, const Pose2& truth) {
    const FreeSpaceFeature& f = fs.features[static_cast<size_t>(i)];
    Pose2 q = featureInScene(fs, f);
    MatchedFeature m;
    m.kind = f.kind;
    m.feature_index = i;
    m.is_line = f.kind == FeatureKind::stop_line || f.kind == FeatureKind::lane_line ||
                f.kind == FeatureKind::curb;
    m.point_v = truth.toLocal(q.position());
    m.direction_deg = q.heading_deg - truth.heading_deg;
    return m;
}

}  // namespace

TEST_CASE("init_state seeds a cruising state from the map") {
    TopologyMap map = fixtures::smallMap();
    VehicleState s = initState(map, "DS1", 2);
    CHECK((s.mode == Mode::cruising));
    CHECK(s.detectable_set_id == "DS1");
    CHECK(s.lane_number == 2);
    CHECK(s.lane_width_m == doctest::Approx(3.5));
    CHECK(s.lane_width_rule == 4);
    CHECK_FALSE(s.pose.has_value());
    CHECK_THROWS_AS(initState(map, "nope", 1), Error);
    CHECK_THROWS_AS(initState(map, "DS1", 3), Error);
    CHECK_THROWS_AS(initState(map, "DS1", 0), Error);
}

TEST_CASE("lane width rules fire in priority order") {
    TopologyMap map = fixtures::smallMap();
    const DetectableLaneSet& set = map.detectable_sets[0];
    VehicleState st = initState(map, "DS1", 1);
    LineSpec solid = fixtures::solidStraight();
    LineSpec curb = fixtures::solidStraight(true);

    SUBCASE("rule 1: bracketing pair") {
        auto [w, r] = resolveLaneWidth({obs(-1.7, solid), obs(1.8, solid)}, set, st);
        CHECK(r == 1);
        CHECK(w == doctest::Approx(3.5));
    }
    SUBCASE("rule 2: adjacent pair off to one side") {
        auto [w, r] = resolveLaneWidth({obs(0.6, solid), obs(4.1, solid)}, set, st);
        CHECK(r == 2);
        CHECK(w == doctest::Approx(3.5));
    }
    SUBCASE("rule 3: two curbs split across the lane count") {
        auto [w, r] = resolveLaneWidth({obs(-3.4, curb), obs(3.6, curb)}, set, st);
        CHECK(r == 3);
        CHECK(w == doctest::Approx(7.0 / 2.0));
    }
    SUBCASE("rule 4: nothing usable") {
        auto [w, r] = resolveLaneWidth({obs(1.1, solid)}, set, st);
        CHECK(r == 4);
        CHECK(w == doctest::Approx(set.default_lane_width_m));
        auto [w2, r2] = resolveLaneWidth({}, set, st);
        CHECK(r2 == 4);
        CHECK(w2 == doctest::Approx(set.default_lane_width_m));
    }
}

TEST_CASE("update_cruise tracks the lane from boundary types") {
    TopologyMap map = fixtures::smallMap();
    LineSpec dashed = fixtures::dashedStraight();
    LineSpec solid = fixtures::solidStraight();
    LineSpec curb = fixtures::solidStraight(true);
    VehicleState s1 = initState(map, "DS1", 1);

    SUBCASE("matching types keep the lane") {
        VehicleState n = updateCruise(s1, {obs(-1.7, dashed), obs(1.8, curb)}, map);
        CHECK(n.lane_number == 1);
        CHECK(n.lane_consistent);
        CHECK(n.lane_width_rule == 1);
    }
    SUBCASE("mismatch migrates to the nearest consistent lane") {
        // solid left + dashed right is lane 2's signature
        VehicleState n = updateCruise(s1, {obs(-1.7, solid), obs(1.8, dashed)}, map);
        CHECK(n.lane_number == 2);
        CHECK(n.lane_consistent);
    }
    SUBCASE("a curb pins the lane by counting lines in between") {
        VehicleState s2 = initState(map, "DS1", 2);
        // curb close on the right, nothing between: must be lane 1
        VehicleState n = updateCruise(s2, {obs(1.8, curb), obs(-1.7, dashed)}, map);
        CHECK(n.lane_number == 1);
        // curb far right with one line between: lane 2
        n = updateCruise(s1, {obs(5.3, curb), obs(1.75, dashed), obs(-1.75, solid)}, map);
        CHECK(n.lane_number == 2);
    }
    SUBCASE("ending flags propagate") {
        VehicleState n = updateCruise(s1, {obs(-1.7, dashed, LaneEnding::stop_line)}, map);
        CHECK(n.lane_ending);
        n = updateCruise(s1, {obs(-1.7, dashed)}, map);
        CHECK_FALSE(n.lane_ending);
    }
    SUBCASE("property: lane number stays within the set") {
        std::mt19937 rng(3);
        std::uniform_real_distribution<double> lat(-8.0, 8.0);
        VehicleState s = s1;
        for (int i = 0; i < 200; ++i) {
            std::vector<ObservedLine> det;
            int n = static_cast<int>(rng() % 4);
            for (int k = 0; k < n; ++k) {
                LineSpec sp = (rng() % 3 == 0) ? curb : ((rng() % 2) ? dashed : solid);
                det.push_back(obs(lat(rng), sp));
            }
            s = updateCruise(s, det, map);
            CHECK(s.lane_number >= 1);
            CHECK(s.lane_number <= 2);
        }
    }
    SUBCASE("wrong mode throws") {
        VehicleState t = s1;
        t.mode = Mode::turning;
        CHECK_THROWS_AS(updateCruise(t, {}, map), Error);
    }
}

TEST_CASE("scene frame round-trips feature poses") {
    FreeSpace fs = crossSpace();
    // move the whole space so its frame is not the identity
    for (auto& f : fs.features) {
        Pose2 shift{10.0, -4.0, 30.0};
        Eigen::Vector2d p = shift.toParent(f.pose.position());
        f.pose = {p.x(), p.y(), wrap360(f.pose.heading_deg + 30.0)};
    }
    Pose2 frame = sceneFrame(fs);
    for (const auto& f : fs.features) {
        Pose2 in_scene = featureInScene(fs, f);
        Eigen::Vector2d back = frame.toParent(in_scene.position());
        CHECK((back - f.pose.position()).norm() < 1e-9);
        CHECK(angleDiff(in_scene.heading_deg + frame.heading_deg, f.pose.heading_deg) < 1e-9);
    }
    Pose2 first = featureInScene(fs, fs.features[0]);
    CHECK(first.position().norm() < 1e-9);
    CHECK(std::fabs(wrap180(first.heading_deg)) < 1e-9);

    FreeSpace empty;
    CHECK_THROWS_AS(sceneFrame(empty), Error);
}

TEST_CASE("anchors: perpendicular lines strong, parallel weak-less, points weak") {
    FreeSpace fs = crossSpace();
    Pose2 truth{0.0, 0.0, 0.0};
    MatchedFeature stop = seen(fs, 0, truth);    // heading 0
    MatchedFeature lane90 = seen(fs, 1, truth);  // heading 90
    MatchedFeature lane0 = seen(fs, 2, truth);   // heading 0
    MatchedFeature sign = seen(fs, 3, truth);    // point

    auto a1 = buildAnchors({stop, lane90}, fs);
    REQUIRE(a1.size() == 1);
    CHECK(a1[0].strong);

    auto a2 = buildAnchors({stop, lane0}, fs);  // parallel pair
    CHECK(a2.empty());

    auto a3 = buildAnchors({sign}, fs);
    REQUIRE(a3.size() == 1);
    CHECK_FALSE(a3[0].strong);

    MatchedFeature unbound = lane90;
    unbound.feature_index = -1;
    CHECK(buildAnchors({unbound}, fs).empty());
}

TEST_CASE("rebuild_scene: identity pose from in-place observations") {
    FreeSpace fs = crossSpace();
    Pose2 truth{0.0, 0.0, 0.0};
    auto anchors = buildAnchors({seen(fs, 0, truth), seen(fs, 1, truth)}, fs);
    RebuiltScene scene = rebuildScene(anchors, fs, std::nullopt);
    CHECK(scene.vehicle.position().norm() < 1e-9);
    CHECK(std::fabs(wrap180(scene.vehicle.heading_deg)) < 1e-9);
    CHECK_FALSE(scene.degraded);
    CHECK(scene.features.size() == fs.features.size());
}

TEST_CASE("rebuild_scene: two perpendicular lines fix the pose in closed form") {
    FreeSpace fs = crossSpace();
    Pose2 truth{1.5, -2.0, 25.0};
    auto anchors = buildAnchors({seen(fs, 0, truth), seen(fs, 1, truth)}, fs);
    Pose2 rough{1.0, -1.0, 20.0};
    RebuiltScene scene = rebuildScene(anchors, fs, rough);
    CHECK((scene.vehicle.position() - truth.position()).norm() < 1e-9);
    CHECK(angleDiff(scene.vehicle.heading_deg, truth.heading_deg) < 1e-9);
}

TEST_CASE("rebuild_scene property: exact recovery of random displacements") {
    FreeSpace fs = crossSpace();
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> pos(-6.0, 6.0), hdg(-80.0, 80.0);
    for (int i = 0; i < 100; ++i) {
        Pose2 truth{pos(rng), pos(rng), wrap360(hdg(rng))};
        std::vector<MatchedFeature> feats = {seen(fs, 0, truth), seen(fs, 1, truth),
                                             seen(fs, 2, truth), seen(fs, 3, truth)};
        auto anchors = buildAnchors(feats, fs);
        Pose2 rough{truth.x + 0.5, truth.y - 0.5, truth.heading_deg + 5.0};
        RebuiltScene scene = rebuildScene(anchors, fs, rough);
        CHECK((scene.vehicle.position() - truth.position()).norm() < 1e-6);
        CHECK(angleDiff(scene.vehicle.heading_deg, truth.heading_deg) < 1e-6);
    }
}

TEST_CASE("rebuild_scene: weak anchors translate, previous fixes heading") {
    FreeSpace fs = crossSpace();
    Pose2 truth{2.0, 1.0, 0.0};
    auto anchors = buildAnchors({seen(fs, 3, truth)}, fs);
    REQUIRE(anchors.size() == 1);
    Pose2 prev{1.8, 0.7, 0.0};  // right heading, stale position
    RebuiltScene scene = rebuildScene(anchors, fs, prev);
    CHECK((scene.vehicle.position() - truth.position()).norm() < 1e-9);
    CHECK(scene.vehicle.heading_deg == doctest::Approx(0.0));
    // without a previous pose the heading is unconstrained
    CHECK_THROWS_AS(rebuildScene(anchors, fs, std::nullopt), Error);
}

TEST_CASE("rebuild_scene: parallel lines alone leave the pose degraded") {
    FreeSpace fs = crossSpace();
    Pose2 truth{0.5, 0.5, 0.0};
    auto anchors = buildAnchors({seen(fs, 0, truth), seen(fs, 2, truth)}, fs);
    CHECK(anchors.empty());
    Pose2 prev{0.4, 0.4, 1.0};
    RebuiltScene scene = rebuildScene(anchors, fs, prev);
    CHECK(scene.degraded);
    CHECK((scene.vehicle.position() - prev.position()).norm() < 1e-9);
    CHECK_THROWS_AS(rebuildScene(anchors, fs, std::nullopt), Error);
}

TEST_CASE("rebuild_scene records the target entrance") {
    FreeSpace fs = crossSpace();
    Pose2 truth{0.0, 0.0, 0.0};
    auto anchors = buildAnchors({seen(fs, 0, truth), seen(fs, 1, truth)}, fs);
    RebuiltScene scene = rebuildScene(anchors, fs, std::nullopt, "L2");
    REQUIRE(scene.target_entrance.has_value());
    CHECK(scene.target_entrance->x == doctest::Approx(0.0));
    CHECK(scene.target_entrance->y == doctest::Approx(6.0));
}

TEST_CASE("match_features binds to the nearest compatible feature") {
    FreeSpace fs = crossSpace();
    Pose2 guess{0.0, 0.0, 0.0};

    MatchedFeature line;
    line.kind = FeatureKind::lane_line;
    line.is_line = true;
    line.point_v = {2.8, 1.0};  // near feature 1 (x = 3 line)
    line.direction_deg = 88.0;
    auto out = matchFeatures({line}, fs, guess);
    REQUIRE(out.size() == 1);
    CHECK(out[0].feature_index == 1);

    // angle gate rejects a perpendicular interpretation
    line.direction_deg = 0.0;
    line.point_v = {2.8, 2.0};
    out = matchFeatures({line}, fs, guess);
    CHECK(out[0].feature_index == 2);  // the horizontal lane line instead

    // distant observations stay unbound
    MatchedFeature sign;
    sign.kind = FeatureKind::sign;
    sign.is_line = false;
    sign.point_v = {40.0, 40.0};
    out = matchFeatures({sign}, fs, guess);
    CHECK(out[0].feature_index == -1);

    // existing bindings are preserved and reserve the feature
    MatchedFeature bound = seen(fs, 1, guess);
    MatchedFeature rival = bound;
    rival.feature_index = -1;
    rival.point_v.x() += 0.1;
    out = matchFeatures({bound, rival}, fs, guess);
    CHECK(out[0].feature_index == 1);
    CHECK(out[1].feature_index != 1);
}

TEST_CASE("step_free_space: phases advance and anchor loss degrades") {
    TopologyMap map = fixtures::smallMap();
    map.free_spaces[0] = crossSpace();
    map.free_spaces[0].entry_ids = {"E1"};
    map.free_spaces[0].exit_ids = {"X1"};
    const FreeSpace& fs = map.free_spaces[0];

    VehicleState st = initState(map, "DS1", 1);
    st.mode = Mode::turning;
    st.phase = TurnPhase::exiting_lane;
    st.free_space_id = "F1";
    st.target_lane_id = "L2";
    st.pose = Pose2{0.0, -1.0, 0.0};

    Pose2 truth{0.2, -0.8, 2.0};
    TurnInput in;
    in.features = {seen(fs, 0, truth), seen(fs, 1, truth)};
    VehicleState n1 = stepFreeSpace(st, in, map);
    CHECK((n1.mode == Mode::turning));
    CHECK((n1.phase == TurnPhase::in_free_space));  // strong anchor seen
    REQUIRE(n1.pose.has_value());
    CHECK((n1.pose->position() - truth.position()).norm() < 1e-6);
    CHECK_FALSE(n1.degraded);

    // the target entrance is 6 m up; closing in flips to entering_target
    Pose2 closer{0.0, 2.0, 45.0};
    TurnInput in2;
    in2.features = {seen(fs, 0, closer), seen(fs, 1, closer)};
    VehicleState n2 = stepFreeSpace(n1, in2, map);
    CHECK((n2.phase == TurnPhase::entering_target));

    // dead reckoning: repeated empty frames keep the last delta moving
    VehicleState cur = n2;
    TurnInput blank;
    for (int i = 0; i <= kMaxAnchorlessFrames; ++i) {
        CHECK_FALSE(cur.degraded);
        cur = stepFreeSpace(cur, blank, map);
    }
    CHECK(cur.degraded);
    CHECK(cur.frames_without_anchor == kMaxAnchorlessFrames + 1);

    // spotting the target set hands back a cruising state on the mapped lane
    TurnInput done;
    done.features = in2.features;
    done.target_set_detected = true;
    VehicleState n3 = stepFreeSpace(n2, done, map);
    CHECK((n3.mode == Mode::cruising));
    CHECK(n3.detectable_set_id == "DS1");
    CHECK(n3.lane_number == map.laneNumber("L2"));
    CHECK_FALSE(n3.pose.has_value());

    VehicleState bad = initState(map, "DS1", 1);
    CHECK_THROWS_AS(stepFreeSpace(bad, in, map), Error);
}
