#ifndef ECP_GEOMETRY_HPP
#define ECP_GEOMETRY_HPP

#include <Eigen/Dense>
#include <cmath>

// Angle conventions used across the project:
//  - Compass degrees [0, 360): 0 = map north, clockwise. Used for lat/lon
//    entities (turning points, entrances/exits) and lane start directions.
//  - Planar math degrees: counterclockwise from +x. Used in metric frames
//    (bird's-eye-view ground plane, free-space frames, vehicle frame).
//  - Line angles are directions modulo 180, kept in [0, 180).
// Image pixels: row 0 is the top; a direction of 90 deg points up the image.

namespace ecp {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Wrap an angle to [0, 360).
inline double wrap360(double deg) {
    double a = std::fmod(deg, 360.0);
    if (a < 0) a += 360.0;
    return a;
}

/// Wrap a line direction to [0, 180).
inline double wrap180(double deg) {
    double a = std::fmod(deg, 180.0);
    if (a < 0) a += 180.0;
    return a;
}

/// Absolute difference of two full directions, wrapped into [0, 180].
inline double angleDiff(double a, double b) {
    double d = std::fabs(wrap360(a) - wrap360(b));
    return d > 180.0 ? 360.0 - d : d;
}

/// Absolute difference of two line directions (mod 180), in [0, 90].
inline double lineAngleDiff(double a, double b) {
    double d = std::fabs(wrap180(a) - wrap180(b));
    return d > 90.0 ? 180.0 - d : d;
}

/// Signed shortest rotation from `from` to `to`, in (-180, 180].
inline double angleDelta(double from, double to) {
    double d = std::fmod(to - from, 360.0);
    if (d > 180.0) d -= 360.0;
    if (d <= -180.0) d += 360.0;
    return d;
}

/// Rounding half-up, the convention for all pixel quantization.
inline int roundHalfUp(double v) {
    return static_cast<int>(std::floor(v + 0.5));
}

/// 2-D pose: position in meters plus heading in math degrees (ccw from +x).
struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double heading_deg = 0.0;

    bool operator==(const Pose2&) const = default;

    Eigen::Vector2d position() const { return {x, y}; }
    Eigen::Rotation2Dd rotation() const { return Eigen::Rotation2Dd(deg2rad(heading_deg)); }

    /// Map a point from this pose's local frame into the parent frame.
    Eigen::Vector2d toParent(const Eigen::Vector2d& local) const {
        return rotation() * local + position();
    }
    /// Map a parent-frame point into this pose's local frame.
    Eigen::Vector2d toLocal(const Eigen::Vector2d& parent) const {
        return rotation().inverse() * (parent - position());
    }
    /// Compose: the pose of `child` (expressed in this frame) in the parent frame.
    Pose2 compose(const Pose2& child) const {
        Eigen::Vector2d p = toParent(child.position());
        return {p.x(), p.y(), wrap360(heading_deg + child.heading_deg)};
    }
};

inline Eigen::Vector2d unitVector(double math_deg) {
    return {std::cos(deg2rad(math_deg)), std::sin(deg2rad(math_deg))};
}

/// Compass (0 = north, cw) to planar math degrees (0 = +x, ccw) where +y is north.
inline double compassToMath(double compass_deg) { return wrap360(90.0 - compass_deg); }
inline double mathToCompass(double math_deg) { return wrap360(90.0 - math_deg); }

}  // namespace ecp

#endif
