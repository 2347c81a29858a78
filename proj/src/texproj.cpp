#include "cit3d/texproj.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "cit3d/error.hpp"

namespace cit3d {

TexturedPointCloud::TexturedPointCloud(std::vector<Vec3> positions, double splat_radius)
    : positions_(std::move(positions)), splat_radius_(splat_radius) {
    if (!(splat_radius > 0.0)) throw std::invalid_argument("splat radius must be positive");
    normals_ = estimate_normals(positions_, 2.0 * splat_radius);
    colors_.assign(positions_.size(), Vec3{});
    source_.assign(positions_.size(), kNoView);
}

TexturedPointCloud TexturedPointCloud::from_surface(const SurfaceCloud& cloud, double splat_radius) {
    std::vector<Vec3> p;
    p.reserve(cloud.size());
    for (const SurfacePoint& s : cloud.points) p.push_back(s.position);
    return TexturedPointCloud(std::move(p), splat_radius);
}

std::size_t TexturedPointCloud::colored_count() const {
    std::size_t n = 0;
    for (int s : source_) n += s != kNoView;
    return n;
}

void TexturedPointCloud::assign(std::size_t i, const Vec3& color, int view) {
    if (view < 0) throw std::logic_error("color source view must be non-negative");
    if (source_.at(i) != kNoView) throw std::logic_error("point " + std::to_string(i) + " is already colored");
    colors_[i] = color;
    source_[i] = view;
    ++writes_;
}

namespace {

// Eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix, or zero when the two larger
// eigenvalues do not span a plane.
Vec3 smallest_eigenvector(const std::array<double, 6>& m) {
    const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5]; // xx xy xz yy yz zz
    const double q = (a + d + f) / 3.0;
    const double p1 = b * b + c * c + e * e;
    const double p2 = (a - q) * (a - q) + (d - q) * (d - q) + (f - q) * (f - q) + 2.0 * p1;
    if (p2 <= 0.0) return {};
    const double p = std::sqrt(p2 / 6.0);
    const double ba = (a - q) / p, bb = b / p, bc = c / p, bd = (d - q) / p, be = e / p, bf = (f - q) / p;
    const double det = ba * (bd * bf - be * be) - bb * (bb * bf - be * bc) + bc * (bb * be - bd * bc);
    const double phi = std::acos(std::clamp(det / 2.0, -1.0, 1.0)) / 3.0;
    const double l1 = q + 2.0 * p * std::cos(phi);
    const double l3 = q + 2.0 * p * std::cos(phi + 2.0 * kPi / 3.0);
    const double l2 = 3.0 * q - l1 - l3;
    if (l2 <= 1e-6 * l1) return {};
    const Vec3 r0{a - l3, b, c}, r1{b, d - l3, e}, r2{c, e, f - l3};
    const Vec3 cands[3] = {cross(r0, r1), cross(r0, r2), cross(r1, r2)};
    const Vec3* best = &cands[0];
    for (const Vec3& v : cands)
        if (dot(v, v) > dot(*best, *best)) best = &v;
    const double len = length(*best);
    return len > 0.0 ? *best / len : Vec3{};
}

} // namespace

std::vector<Vec3> estimate_normals(const std::vector<Vec3>& positions, double radius) {
    std::vector<Vec3> normals(positions.size());
    if (!(radius > 0.0)) return normals;
    const auto cell_of = [&](const Vec3& p) {
        return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor(p.x / radius)),
                                           static_cast<std::int64_t>(std::floor(p.y / radius)),
                                           static_cast<std::int64_t>(std::floor(p.z / radius))};
    };
    const auto key = [](std::int64_t x, std::int64_t y, std::int64_t z) {
        return (static_cast<std::uint64_t>(x) * 73856093u) ^ (static_cast<std::uint64_t>(y) * 19349663u) ^
               (static_cast<std::uint64_t>(z) * 83492791u);
    };
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto c = cell_of(positions[i]);
        grid[key(c[0], c[1], c[2])].push_back(static_cast<std::uint32_t>(i));
    }
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Vec3& p = positions[i];
        const auto c = cell_of(p);
        std::vector<Vec3> near;
        for (std::int64_t dz = -1; dz <= 1; ++dz)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dx = -1; dx <= 1; ++dx) {
                    const auto it = grid.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
                    if (it == grid.end()) continue;
                    for (std::uint32_t j : it->second) {
                        const Vec3 d = positions[j] - p;
                        if (dot(d, d) <= r2) near.push_back(positions[j]);
                    }
                }
        if (near.size() < 3) continue;
        Vec3 mean;
        for (const Vec3& q : near) mean += q;
        mean = mean / double(near.size());
        std::array<double, 6> m{};
        for (const Vec3& q : near) {
            const Vec3 d = q - mean;
            m[0] += d.x * d.x, m[1] += d.x * d.y, m[2] += d.x * d.z;
            m[3] += d.y * d.y, m[4] += d.y * d.z, m[5] += d.z * d.z;
        }
        normals[i] = smallest_eigenvector(m);
    }
    return normals;
}

void validate_views(const ViewImageSet& views) {
    if (views.empty()) throw std::invalid_argument("view set is empty");
    const int W = views[0].camera.width;
    const int H = views[0].camera.height;
    for (const ViewImage& v : views) {
        v.camera.validate();
        if (v.camera.width != W || v.camera.height != H || v.image.width() != W || v.image.height() != H ||
            v.image.channels() != 3 || v.mask.width() != W || v.mask.height() != H || v.mask.channels() != 1) {
            throw DimensionError("view images must share the reference view's dimensions");
        }
    }
}

// ---------------------------------------------------------------------------------------------
// Splats

std::vector<ProjectedPoint> project_points(const std::vector<Vec3>& positions, double splat_radius,
                                           const CameraPose& camera) {
    return project_points(positions, {}, splat_radius, camera);
}

std::vector<ProjectedPoint> project_points(const TexturedPointCloud& cloud, const CameraPose& camera) {
    return project_points(cloud.positions(), cloud.normals(), cloud.splat_radius(), camera);
}

std::vector<ProjectedPoint> project_points(const std::vector<Vec3>& positions, const std::vector<Vec3>& normals,
                                           double splat_radius, const CameraPose& camera) {
    if (!normals.empty() && normals.size() != positions.size()) {
        throw DimensionError("project_points: normals do not match positions");
    }
    const double f = camera.focal_px();
    const Vec3 eye = camera.position();
    const Vec3 fw = camera.forward();
    const Vec3 rt = normalize(cross(fw, Vec3{0.0, 1.0, 0.0}));
    const Vec3 upv = cross(rt, fw);
    std::vector<ProjectedPoint> out(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const CameraPose::Projection pr = camera.project(positions[i]);
        ProjectedPoint& p = out[i];
        if (!pr.in_front) continue;
        p.u = pr.u;
        p.v = pr.v;
        p.depth = pr.depth;
        p.radius_px = splat_radius * f / pr.depth;
        p.valid = p.u + p.radius_px >= 0.0 && p.v + p.radius_px >= 0.0 && p.u - p.radius_px < camera.width &&
                  p.v - p.radius_px < camera.height;
        if (!normals.empty() && dot(normals[i], normals[i]) > 0.0) {
            const Vec3 d = positions[i] - eye;
            p.oriented = true;
            p.center = {dot(d, rt), dot(d, upv), dot(d, fw)};
            p.normal = {dot(normals[i], rt), dot(normals[i], upv), dot(normals[i], fw)};
            p.radius = splat_radius;
            p.inv_focal = 1.0 / f;
        }
    }
    return out;
}

bool projection_pixel(const ProjectedPoint& p, int width, int height, int& x, int& y) {
    if (!p.valid || p.u < 0.0 || p.v < 0.0) return false;
    x = static_cast<int>(p.u);
    y = static_cast<int>(p.v);
    return x < width && y < height;
}

Image splat_depth_buffer(const std::vector<ProjectedPoint>& projected, int width, int height) {
    Image z(width, height, 1, std::numeric_limits<double>::infinity());
    for (const ProjectedPoint& p : projected) {
        if (!p.valid) continue;
        for_each_splat_pixel(p, width, height, [&](int x, int y, double, double, double depth) {
            double& d = z.at(x, y);
            d = std::min(d, depth);
        });
    }
    return z;
}

// ---------------------------------------------------------------------------------------------
// Projection

std::vector<char> visible_points(const TexturedPointCloud& cloud, const CameraPose& camera, double depth_epsilon) {
    if (!(depth_epsilon > 0.0)) throw std::invalid_argument("depth_epsilon must be positive");
    camera.validate();
    const auto proj = project_points(cloud, camera);
    const Image z = splat_depth_buffer(proj, camera.width, camera.height);
    std::vector<char> vis(cloud.size(), 0);
    for (std::size_t i = 0; i < proj.size(); ++i) {
        int x = 0;
        int y = 0;
        if (!projection_pixel(proj[i], camera.width, camera.height, x, y)) continue;
        double own = proj[i].depth;
        if (!proj[i].depth_at(x + 0.5 - proj[i].u, y + 0.5 - proj[i].v, own)) own = proj[i].depth;
        vis[i] = own <= z.at(x, y) + depth_epsilon;
    }
    return vis;
}

Image reproject_mask(const TexturedPointCloud& cloud, const CameraPose& camera, double depth_epsilon) {
    const std::vector<char> vis = visible_points(cloud, camera, depth_epsilon);
    const auto proj = project_points(cloud, camera);
    Image mask(camera.width, camera.height, 1, 0.0);
    for (std::size_t i = 0; i < proj.size(); ++i) {
        if (!vis[i] || !cloud.colored(i)) continue;
        for_each_splat_pixel(proj[i], camera.width, camera.height,
                             [&](int x, int y, double, double, double) { mask.at(x, y) = 1.0; });
    }
    return mask;
}

std::size_t project_view(TexturedPointCloud& cloud, int view, const CameraPose& camera, const Image& image,
                         const Image& allowed_mask, double depth_epsilon) {
    camera.validate();
    if (image.width() != camera.width || image.height() != camera.height || image.channels() != 3) {
        throw DimensionError("project_view: image does not match the camera");
    }
    require_same_size(image, allowed_mask, "project_view mask");
    const std::vector<char> vis = visible_points(cloud, camera, depth_epsilon);
    const auto proj = project_points(cloud, camera);
    std::size_t added = 0;
    double rgb[3];
    for (std::size_t i = 0; i < proj.size(); ++i) {
        if (!vis[i] || cloud.colored(i)) continue;
        int x = 0;
        int y = 0;
        if (!projection_pixel(proj[i], camera.width, camera.height, x, y)) continue;
        if (allowed_mask.at(x, y) <= 0.5) continue;
        sample_bilinear(image, proj[i].u, proj[i].v, rgb);
        cloud.assign(i, {rgb[0], rgb[1], rgb[2]}, view);
        ++added;
    }
    return added;
}

ProjectionReport build_textured_cloud(TexturedPointCloud& cloud, const ViewImageSet& views, double depth_epsilon) {
    validate_views(views);
    ProjectionReport report;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const ViewImage& v = views[i];
        Image allowed = v.mask;
        if (i > 0) {
            const Image claimed = reproject_mask(cloud, v.camera, depth_epsilon);
            for (std::size_t k = 0; k < allowed.data().size(); ++k) {
                if (claimed.data()[k] > 0.5) allowed.data()[k] = 0.0;
            }
        }
        report.newly_colored.push_back(
            project_view(cloud, static_cast<int>(i), v.camera, v.image, allowed, depth_epsilon));
    }
    report.uncolored = cloud.size() - cloud.colored_count();
    return report;
}

ViewImageSet order_views(ViewImageSet views) {
    if (views.size() < 3) return views;
    const double ref = views[0].camera.azimuth;
    const auto offset = [&](const ViewImage& v) {
        const double d = wrap_angle(v.camera.azimuth - ref);
        return std::min(d, 2.0 * kPi - d);
    };
    std::stable_sort(views.begin() + 1, views.end(),
                     [&](const ViewImage& a, const ViewImage& b) { return offset(a) < offset(b); });
    return views;
}

} // namespace cit3d
