// Independent reference implementations used by the unit tests and the acceptance runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cit3d/camera.hpp"
#include "cit3d/field.hpp"
#include "cit3d/image.hpp"
#include "cit3d/scene.hpp"
#include "cit3d/texproj.hpp"

namespace oracle {

using namespace cit3d;

/// Ray/box slab test written out longhand.
inline bool box_span(const Aabb& b, const Vec3& o, const Vec3& d, double& t0, double& t1) {
    t0 = 0.0;
    t1 = 1e300;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-300) {
            if (o[a] < b.lo[a] || o[a] > b.hi[a]) return false;
            continue;
        }
        double ta = (b.lo[a] - o[a]) / d[a];
        double tb = (b.hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t1 > t0;
}

/// Midpoint-rule albedo compositing over `samples` equal bins, no early termination.
inline Image brute_force_render(const VoxelField& field, const CameraPose& cam, int samples, double background = 1.0) {
    Image out(cam.width, cam.height, 3, background);
    const Vec3 eye = cam.position();
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 dir = cam.ray_direction(x + 0.5, y + 0.5);
            double t0, t1;
            if (!box_span(field.bbox(), eye, dir, t0, t1)) continue;
            const double dt = (t1 - t0) / samples;
            double trans = 1.0;
            Vec3 rgb;
            for (int i = 0; i < samples; ++i) {
                const FieldSample s = sample_field(field, eye + (t0 + (i + 0.5) * dt) * dir);
                const double alpha = 1.0 - std::exp(-s.density * dt);
                rgb += trans * alpha * s.albedo;
                trans *= 1.0 - alpha;
            }
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c] + trans * background;
        }
    }
    return out;
}

/// Voxelizes a synthetic scene: indicator density and the scene albedo at voxel centers.
inline VoxelField voxelize(const SyntheticScene& scene, int n, double half, double inside_density) {
    VoxelField f({n, n, n}, Aabb{{-half, -half, -half}, {half, half, half}});
    for (int z = 0; z < n; ++z) {
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                const Vec3 p = f.voxel_center(x, y, z);
                const Vec3 a = scene.albedo(p);
                const Vec3 clamped{std::clamp(a.x, 0.01, 0.99), std::clamp(a.y, 0.01, 0.99), std::clamp(a.z, 0.01, 0.99)};
                f.set_voxel(x, y, z, scene.inside(p) ? inside_density : 1e-6, clamped);
            }
        }
    }
    return f;
}

struct GradientCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t nonzero = 0; // parameters whose gradient magnitude exceeds the floor
};

/// Central finite differences of L = <upstream, rgb> over every raw parameter, compared with
/// render_backward. Relative error uses a floor of `floor` on the magnitude so parameters the
/// loss does not touch compare as absolute errors.
inline GradientCheck check_render_gradient(VoxelField field, const CameraPose& cam, ShadingMode mode,
                                           const Image& upstream, RenderOptions opt, double h = 1e-3,
                                           double floor = 1e-6) {
    opt.early_stop = 0.0;
    const auto loss = [&](const VoxelField& f) {
        const RenderedView v = render_view(f, cam, mode, opt);
        double s = 0.0;
        for (std::size_t i = 0; i < v.rgb.data().size(); ++i) s += upstream.data()[i] * v.rgb.data()[i];
        return s;
    };
    ViewGradient up;
    up.rgb = upstream;
    const FieldGradient g = render_backward(field, cam, mode, up, opt);
    GradientCheck out;
    const auto compare = [&](double analytic, double numeric) {
        const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
        out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / scale);
        ++out.checked;
        out.nonzero += scale > floor;
    };
    const std::size_t n = field.voxel_count();
    for (std::size_t i = 0; i < n; ++i) {
        const auto nudge = [&](double d) { field.update([&](auto dens, auto) { dens[i] += d; }); };
        nudge(h);
        const double lp = loss(field);
        nudge(-2.0 * h);
        const double lm = loss(field);
        nudge(h);
        compare(g.density[i], (lp - lm) / (2.0 * h));
    }
    for (std::size_t i = 0; i < 3 * n; ++i) {
        const auto nudge = [&](double d) { field.update([&](auto, auto alb) { alb[i] += d; }); };
        nudge(h);
        const double lp = loss(field);
        nudge(-2.0 * h);
        const double lm = loss(field);
        nudge(h);
        compare(g.albedo[i], (lp - lm) / (2.0 * h));
    }
    return out;
}

/// Small random field with visible structure on every voxel.
inline VoxelField random_field(int n, std::uint64_t seed) {
    VoxelField f({n, n, n}, Aabb{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.5), a(-2.0, 2.0);
    f.update([&](auto dens, auto alb) {
        for (double& v : dens) v = d(rng);
        for (double& v : alb) v = a(rng);
    });
    return f;
}

struct ConflictAudit {
    std::size_t conflicts = 0;      // points whose color disagrees with an unrestricted projection
    std::size_t wrong_source = 0;   // source view that could not see the point at all
    std::size_t colored = 0;
};

/// Brute-force audit: projects every view independently and without restrictions onto a fresh
/// copy of the cloud, then checks each colored point against the candidates of its source view.
inline ConflictAudit audit_projection(const TexturedPointCloud& textured, const ViewImageSet& views,
                                      double depth_epsilon, double color_tolerance = 1e-9) {
    std::vector<std::vector<char>> can_see;
    std::vector<std::vector<Vec3>> candidate;
    for (std::size_t v = 0; v < views.size(); ++v) {
        TexturedPointCloud fresh(textured.positions(), textured.splat_radius());
        project_view(fresh, static_cast<int>(v), views[v].camera, views[v].image, views[v].mask, depth_epsilon);
        std::vector<char> seen(fresh.size());
        for (std::size_t i = 0; i < fresh.size(); ++i) seen[i] = fresh.colored(i);
        can_see.push_back(std::move(seen));
        candidate.push_back(fresh.colors());
    }
    ConflictAudit a;
    for (std::size_t i = 0; i < textured.size(); ++i) {
        if (!textured.colored(i)) continue;
        ++a.colored;
        const int s = textured.source_views()[i];
        if (s < 0 || std::size_t(s) >= views.size() || !can_see[s][i]) {
            ++a.wrong_source;
            continue;
        }
        if (length(candidate[s][i] - textured.colors()[i]) > color_tolerance) ++a.conflicts;
    }
    return a;
}

} // namespace oracle
