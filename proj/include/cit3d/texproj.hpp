#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cit3d/camera.hpp"
#include "cit3d/extract.hpp"
#include "cit3d/image.hpp"
#include "cit3d/vec.hpp"

namespace cit3d {

inline constexpr int kNoView = -1;

/// Surface points with single-assignment colors. A point is colored exactly when its
/// source_view is set; once set it never changes.
///
/// Splats are disks of splat_radius lying in the local tangent plane. The plane normal is
/// estimated from the points within 2 * splat_radius; isolated points get a zero normal and
/// render as camera-facing disks.
class TexturedPointCloud {
  public:
    TexturedPointCloud() = default;
    TexturedPointCloud(std::vector<Vec3> positions, double splat_radius);
    static TexturedPointCloud from_surface(const SurfaceCloud& cloud, double splat_radius);

    std::size_t size() const { return positions_.size(); }
    double splat_radius() const { return splat_radius_; }
    const std::vector<Vec3>& positions() const { return positions_; }
    const std::vector<Vec3>& normals() const { return normals_; }
    const std::vector<Vec3>& colors() const { return colors_; }
    const std::vector<int>& source_views() const { return source_; }

    bool colored(std::size_t i) const { return source_[i] != kNoView; }
    std::size_t colored_count() const;
    /// Total successful color writes; equals colored_count() under single assignment.
    std::size_t write_count() const { return writes_; }

    /// Throws std::logic_error if the point is already colored or view < 0.
    void assign(std::size_t i, const Vec3& color, int view);

  private:
    std::vector<Vec3> positions_;
    std::vector<Vec3> normals_;
    std::vector<Vec3> colors_;
    std::vector<int> source_;
    double splat_radius_ = 0.0;
    std::size_t writes_ = 0;
};

struct ViewImage {
    CameraPose camera;
    Image image; // H x W x 3
    Image mask;  // H x W, binary
};

/// Element 0 is the reference view.
using ViewImageSet = std::vector<ViewImage>;

/// Unit normals from the principal axes of each point's neighbors within `radius`; zero where
/// fewer than three points are available or they are collinear. The sign is arbitrary.
std::vector<Vec3> estimate_normals(const std::vector<Vec3>& positions, double radius);

/// Throws if the set is empty or any image/mask disagrees with the first view's dimensions.
void validate_views(const ViewImageSet& views);

// ---------------------------------------------------------------------------------------------
// Splat rasterization shared with the refine renderer

struct ProjectedPoint {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0; // along the optical axis
    double radius_px = 0.0;
    bool valid = false; // in front of the camera with a footprint touching the frame

    // Tangent disk in camera coordinates (right, up, forward); oriented == false for a
    // camera-facing disk at constant depth.
    bool oriented = false;
    Vec3 center;
    Vec3 normal;
    double radius = 0.0;
    double inv_focal = 0.0;

    /// Depth of the disk along the ray through the point offset (dx, dy) pixels from the
    /// projection; false when that ray misses the disk.
    bool depth_at(double dx, double dy, double& out) const {
        if (!oriented) {
            out = depth;
            return true;
        }
        const Vec3 ray{center.x / center.z + dx * inv_focal, center.y / center.z - dy * inv_focal, 1.0};
        const double den = dot(normal, ray);
        if (std::abs(den) < 1e-12) return false;
        const double s = dot(normal, center) / den;
        if (!(s > 0.0)) return false;
        const Vec3 off = s * ray - center;
        if (dot(off, off) > radius * radius) return false;
        out = s;
        return true;
    }
};

std::vector<ProjectedPoint> project_points(const std::vector<Vec3>& positions, double splat_radius,
                                           const CameraPose& camera);
/// As above with per-point disk normals (zero entries give camera-facing disks).
std::vector<ProjectedPoint> project_points(const std::vector<Vec3>& positions, const std::vector<Vec3>& normals,
                                           double splat_radius, const CameraPose& camera);
std::vector<ProjectedPoint> project_points(const TexturedPointCloud& cloud, const CameraPose& camera);

/// Calls fn(x, y, dx, dy) for the pixel containing the projection and for every pixel whose
/// center lies within radius_px of it, clipped to the frame. (dx, dy) is the center's offset.
template <class Fn>
void for_each_footprint_pixel(const ProjectedPoint& p, int width, int height, Fn&& fn) {
    const int px = static_cast<int>(std::floor(p.u));
    const int py = static_cast<int>(std::floor(p.v));
    const double r = p.radius_px;
    const int x0 = std::max(0, static_cast<int>(std::floor(p.u - r - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(p.u + r - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(p.v - r - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(p.v + r - 0.5)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x + 0.5 - p.u;
            const double dy = y + 0.5 - p.v;
            if ((x == px && y == py) || dx * dx + dy * dy <= r * r) fn(x, y, dx, dy);
        }
    }
}

/// Calls fn(x, y, dx, dy, depth) for the footprint pixels whose ray meets the splat disk, with
/// the disk depth there. The pixel containing the projection is always visited; when its ray
/// misses a steeply tilted disk the point's own depth is used.
template <class Fn>
void for_each_splat_pixel(const ProjectedPoint& p, int width, int height, Fn&& fn) {
    const int px = static_cast<int>(std::floor(p.u));
    const int py = static_cast<int>(std::floor(p.v));
    for_each_footprint_pixel(p, width, height, [&](int x, int y, double dx, double dy) {
        double d = 0.0;
        if (!p.depth_at(dx, dy, d)) {
            if (x != px || y != py) return;
            d = p.depth;
        }
        fn(x, y, dx, dy, d);
    });
}

/// Minimum splat depth per pixel; +inf where no splat lands.
Image splat_depth_buffer(const std::vector<ProjectedPoint>& projected, int width, int height);

/// Pixel containing the projection, or false when it falls outside the frame.
bool projection_pixel(const ProjectedPoint& p, int width, int height, int& x, int& y);

// ---------------------------------------------------------------------------------------------
// Projection

/// Per-point visibility under `camera`: at the pixel containing its projection, the point's
/// own splat depth is within depth_epsilon of the z-buffer built from all points' splats.
std::vector<char> visible_points(const TexturedPointCloud& cloud, const CameraPose& camera, double depth_epsilon);

/// Coverage of the splats of colored points that are visible under `camera`.
Image reproject_mask(const TexturedPointCloud& cloud, const CameraPose& camera, double depth_epsilon);

/// Colors every uncolored visible point whose pixel lies in allowed_mask (> 0.5) by bilinear
/// sampling of `image`, tagging it with `view`. Returns the number of newly colored points.
std::size_t project_view(TexturedPointCloud& cloud, int view, const CameraPose& camera, const Image& image,
                         const Image& allowed_mask, double depth_epsilon);

struct ProjectionReport {
    std::vector<std::size_t> newly_colored; // per view, in processing order
    std::size_t uncolored = 0;
};

/// Reference view first with its own mask, then each novel view restricted to its mask minus
/// the reprojection of everything colored so far.
ProjectionReport build_textured_cloud(TexturedPointCloud& cloud, const ViewImageSet& views, double depth_epsilon);

/// Reference first, then novel views by increasing |azimuth offset| from the reference
/// (ties keep their input order).
ViewImageSet order_views(ViewImageSet views);

} // namespace cit3d
