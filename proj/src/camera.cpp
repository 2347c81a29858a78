#include "cit3d/camera.hpp"

#include <stdexcept>

namespace cit3d {

void CameraPose::validate() const {
    if (!(radius > 0.0)) throw std::invalid_argument("camera radius must be positive");
    if (!(fov_y > 0.0 && fov_y < kPi)) throw std::invalid_argument("camera fov_y must be in (0, pi)");
    if (width < 1 || height < 1) throw std::invalid_argument("camera width/height must be >= 1");
    if (std::abs(elevation) >= deg_to_rad(89.5)) {
        throw std::invalid_argument("camera elevation must stay away from the poles");
    }
}

Vec3 CameraPose::position() const {
    const double ce = std::cos(elevation);
    return target + radius * Vec3{ce * std::sin(azimuth), std::sin(elevation), ce * std::cos(azimuth)};
}

Vec3 CameraPose::forward() const { return normalize(target - position()); }

Vec3 CameraPose::right() const { return normalize(cross(forward(), Vec3{0.0, 1.0, 0.0})); }

Vec3 CameraPose::up() const { return cross(right(), forward()); }

double CameraPose::focal_px() const { return 0.5 * height / std::tan(0.5 * fov_y); }

Vec3 CameraPose::ray_direction(double u, double v) const {
    const double f = focal_px();
    const Vec3 fw = forward();
    const Vec3 rt = normalize(cross(fw, Vec3{0.0, 1.0, 0.0}));
    const Vec3 upv = cross(rt, fw);
    return normalize(fw + ((u - 0.5 * width) / f) * rt - ((v - 0.5 * height) / f) * upv);
}

CameraPose::Projection CameraPose::project(const Vec3& p) const {
    const Vec3 fw = forward();
    const Vec3 rt = normalize(cross(fw, Vec3{0.0, 1.0, 0.0}));
    const Vec3 upv = cross(rt, fw);
    const Vec3 d = p - position();
    Projection out;
    out.depth = dot(d, fw);
    out.in_front = out.depth > 1e-9;
    if (!out.in_front) return out;
    const double f = focal_px();
    out.u = 0.5 * width + f * dot(d, rt) / out.depth;
    out.v = 0.5 * height - f * dot(d, upv) / out.depth;
    return out;
}

double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * kPi;
    a = std::fmod(a, two_pi);
    if (a < 0.0) a += two_pi;
    if (a >= two_pi) a = 0.0;
    return a;
}

} // namespace cit3d
