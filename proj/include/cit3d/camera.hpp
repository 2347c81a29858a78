#pragma once

#include <numbers>

#include "cit3d/vec.hpp"

namespace cit3d {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Orbit camera: right-handed, y-up, always looking at `target`.
///
/// Azimuth 0 / elevation 0 places the eye on the +z axis; azimuth rotates toward +x.
struct CameraPose {
    double azimuth = 0.0;   // radians
    double elevation = 0.0; // radians
    double radius = 2.5;
    double fov_y = deg_to_rad(40.0);
    int width = 128;
    int height = 128;
    Vec3 target{};

    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;

    Vec3 position() const;
    Vec3 forward() const;
    Vec3 right() const;
    Vec3 up() const;
    double focal_px() const;

    /// Unit direction through continuous pixel coordinate (u, v); pixel centers sit at +0.5.
    Vec3 ray_direction(double u, double v) const;

    struct Projection {
        double u = 0.0;
        double v = 0.0;
        double depth = 0.0; // along the optical axis
        bool in_front = false;
    };
    Projection project(const Vec3& p) const;

    CameraPose with_azimuth(double az) const {
        CameraPose c = *this;
        c.azimuth = az;
        return c;
    }
};

/// Wraps an angle into [0, 2*pi).
double wrap_angle(double a);

} // namespace cit3d
