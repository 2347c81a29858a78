#include "cit3d/scene.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cit3d/error.hpp"

namespace cit3d {

std::string_view to_string(SceneShape s) {
    switch (s) {
    case SceneShape::Sphere: return "sphere";
    case SceneShape::Box: return "box";
    case SceneShape::Union: return "union";
    }
    return "sphere";
}

SceneShape parse_scene_shape(std::string_view token) {
    if (token == "sphere") return SceneShape::Sphere;
    if (token == "box") return SceneShape::Box;
    if (token == "union") return SceneShape::Union;
    throw std::invalid_argument("unknown scene shape: " + std::string(token));
}

void SceneSpec::validate() const {
    if (!(sphere_radius > 0.0)) throw ConfigError("scene.sphere_radius", "must be positive");
    if (!(box_half_size > 0.0)) throw ConfigError("scene.box_half_size", "must be positive");
    if (!(color_frequency >= 0.0)) throw ConfigError("scene.color_frequency", "must be non-negative");
    if (supersample < 1 || supersample > 8) throw ConfigError("scene.supersample", "must be in [1, 8]");
}

SyntheticScene::SyntheticScene(SceneSpec spec) : spec_(spec) { spec_.validate(); }

namespace {

SurfaceHit hit_sphere(const Vec3& c, double r, const Vec3& o, const Vec3& d) {
    SurfaceHit h;
    const Vec3 oc = o - c;
    const double b = dot(oc, d);
    const double cc = dot(oc, oc) - r * r;
    const double disc = b * b - cc;
    if (disc < 0.0) return h;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= 1e-9) t = -b + sq;
    if (t <= 1e-9) return h;
    h.hit = true;
    h.t = t;
    h.position = o + t * d;
    h.normal = normalize(h.position - c);
    return h;
}

SurfaceHit hit_box(const Vec3& c, double half, const Vec3& o, const Vec3& d) {
    SurfaceHit h;
    const Aabb box{c - Vec3{half, half, half}, c + Vec3{half, half, half}};
    double t0 = 0.0;
    double t1 = 0.0;
    if (!intersect_aabb(box, o, d, t0, t1)) return h;
    const double t = t0 > 1e-9 ? t0 : t1;
    if (t <= 1e-9) return h;
    h.hit = true;
    h.t = t;
    h.position = o + t * d;
    // Face normal from the dominant local coordinate.
    const Vec3 local = (h.position - c) / half;
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
        if (std::abs(local[a]) > std::abs(local[axis])) axis = a;
    }
    Vec3 n;
    n[axis] = local[axis] > 0.0 ? 1.0 : -1.0;
    h.normal = n;
    return h;
}

} // namespace

SurfaceHit SyntheticScene::intersect(const Vec3& origin, const Vec3& dir) const {
    SurfaceHit best;
    if (spec_.shape != SceneShape::Box) best = hit_sphere(spec_.sphere_center, spec_.sphere_radius, origin, dir);
    if (spec_.shape != SceneShape::Sphere) {
        const SurfaceHit b = hit_box(spec_.box_center, spec_.box_half_size, origin, dir);
        if (b.hit && (!best.hit || b.t < best.t)) best = b;
    }
    return best;
}

bool SyntheticScene::inside(const Vec3& p) const {
    bool in = false;
    if (spec_.shape != SceneShape::Box) in = length(p - spec_.sphere_center) <= spec_.sphere_radius;
    if (spec_.shape != SceneShape::Sphere) {
        const Vec3 q = p - spec_.box_center;
        const double h = spec_.box_half_size;
        in = in || (std::abs(q.x) <= h && std::abs(q.y) <= h && std::abs(q.z) <= h);
    }
    return in;
}

Vec3 SyntheticScene::albedo(const Vec3& p) const {
    const double f = spec_.color_frequency;
    return {0.55 + 0.35 * std::sin(f * p.x + 0.3), 0.5 + 0.3 * std::sin(f * p.y + 1.3),
            0.5 + 0.35 * std::cos(f * p.z + 0.7)};
}

double SyntheticScene::density(const Vec3& p, double inside_density) const {
    return inside(p) ? inside_density : 0.0;
}

SyntheticScene::Views SyntheticScene::render(const CameraPose& camera, double background) const {
    camera.validate();
    const int W = camera.width;
    const int H = camera.height;
    Views v{Image(W, H, 3, background), Image(W, H, 1, 0.0), Image(W, H, 1, 0.0), Image(W, H, 3, 0.0)};
    const Vec3 eye = camera.position();
    const int ss = spec_.supersample;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const SurfaceHit h = intersect(eye, camera.ray_direction(x + 0.5, y + 0.5));
            if (h.hit) {
                v.mask.at(x, y) = 1.0;
                v.depth.at(x, y) = h.t;
                for (int c = 0; c < 3; ++c) v.normal.at(x, y, c) = h.normal[c];
            }
            Vec3 sum;
            for (int sy = 0; sy < ss; ++sy) {
                for (int sx = 0; sx < ss; ++sx) {
                    const SurfaceHit s =
                        ss == 1 ? h
                                : intersect(eye, camera.ray_direction(x + (sx + 0.5) / ss, y + (sy + 0.5) / ss));
                    sum += s.hit ? albedo(s.position) : Vec3{background, background, background};
                }
            }
            sum = sum / double(ss * ss);
            for (int c = 0; c < 3; ++c) v.rgb.at(x, y, c) = sum[c];
        }
    }
    return v;
}

Image SyntheticScene::render_shaded(const CameraPose& camera, ShadingMode mode, double background) const {
    if (mode == ShadingMode::Albedo) return render(camera, background).rgb;
    camera.validate();
    const int W = camera.width;
    const int H = camera.height;
    Image img(W, H, 3, background);
    const Vec3 eye = camera.position();
    const int ss = spec_.supersample;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            Vec3 sum;
            for (int sy = 0; sy < ss; ++sy) {
                for (int sx = 0; sx < ss; ++sx) {
                    const SurfaceHit s = intersect(eye, camera.ray_direction(x + (sx + 0.5) / ss, y + (sy + 0.5) / ss));
                    sum += s.hit ? (s.normal + Vec3{1.0, 1.0, 1.0}) * 0.5 : Vec3{background, background, background};
                }
            }
            sum = sum / double(ss * ss);
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = sum[c];
        }
    }
    return img;
}

} // namespace cit3d
