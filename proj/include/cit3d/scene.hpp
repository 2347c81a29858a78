#pragma once

#include <string_view>

#include "cit3d/camera.hpp"
#include "cit3d/field.hpp"
#include "cit3d/image.hpp"
#include "cit3d/vec.hpp"

namespace cit3d {

enum class SceneShape { Sphere, Box, Union };

std::string_view to_string(SceneShape s);
SceneShape parse_scene_shape(std::string_view token);

/// Analytic solid with a smooth procedural albedo. `Union` combines the sphere and the box.
struct SceneSpec {
    SceneShape shape = SceneShape::Sphere;
    double sphere_radius = 0.5;
    Vec3 sphere_center{};
    double box_half_size = 0.3;
    Vec3 box_center{0.45, -0.15, 0.0};
    double color_frequency = 3.0;
    int supersample = 1; // rgb is averaged over supersample^2 jitter-free subpixels

    /// Throws ConfigError naming the offending scene.* key.
    void validate() const;
};

struct SurfaceHit {
    bool hit = false;
    double t = 0.0;
    Vec3 position;
    Vec3 normal;
};

/// Ground-truth renderer for the synthetic test object: exact rgb, depth, mask and normals.
class SyntheticScene {
  public:
    explicit SyntheticScene(SceneSpec spec);

    const SceneSpec& spec() const { return spec_; }

    SurfaceHit intersect(const Vec3& origin, const Vec3& dir) const;
    bool inside(const Vec3& p) const;
    Vec3 albedo(const Vec3& p) const;

    /// Indicator density: `inside_density` within the solid, 0 elsewhere.
    double density(const Vec3& p, double inside_density = 50.0) const;

    struct Views {
        Image rgb;    // albedo over background
        Image mask;   // binary coverage of pixel centers
        Image depth;  // ray distance to the surface, 0 off-object
        Image normal; // unit outward normals, 0 off-object
    };
    Views render(const CameraPose& camera, double background = 1.0) const;

    /// Shaded image matching the field's render modes: albedo, or (n + 1) / 2 for normals.
    Image render_shaded(const CameraPose& camera, ShadingMode mode, double background = 1.0) const;

  private:
    SceneSpec spec_;
};

} // namespace cit3d
