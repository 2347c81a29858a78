#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"

#include "oracles.hpp"

#include "cit3d/error.hpp"
#include "cit3d/scene.hpp"
#include "cit3d/texproj.hpp"

using namespace cit3d;

namespace {

std::vector<Vec3> fibonacci_sphere(std::size_t n, double r) {
    std::vector<Vec3> p;
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / double(n);
        const double s = std::sqrt(1.0 - y * y);
        const double phi = golden * double(i);
        p.push_back({r * s * std::cos(phi), r * y, r * s * std::sin(phi)});
    }
    return p;
}

// Far, narrow camera framing the unit-diameter sphere: close to orthographic, so two antipodal
// views see nearly all of it.
CameraPose far_camera(double azimuth_deg, int size) {
    CameraPose c;
    c.azimuth = deg_to_rad(azimuth_deg);
    c.radius = 50.0;
    c.fov_y = 2.0 * std::atan(0.6 / c.radius);
    c.width = c.height = size;
    return c;
}

CameraPose small_camera(double azimuth_deg, int size = 64) {
    CameraPose c;
    c.azimuth = deg_to_rad(azimuth_deg);
    c.elevation = deg_to_rad(10.0);
    c.radius = 3.0;
    c.width = c.height = size;
    return c;
}

ViewImage flat_view(const CameraPose& cam, const Vec3& color) {
    ViewImage v{cam, Image(cam.width, cam.height, 3), Image(cam.width, cam.height, 1, 1.0)};
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            for (int c = 0; c < 3; ++c) v.image.at(x, y, c) = color[c];
    return v;
}

// Views whose color encodes the view index, masked to the sphere silhouette.
ViewImageSet ring_views(const std::vector<double>& azimuths) {
    const SyntheticScene scene(SceneSpec{});
    ViewImageSet views;
    for (std::size_t k = 0; k < azimuths.size(); ++k) {
        const CameraPose cam = small_camera(azimuths[k]);
        ViewImage v = flat_view(cam, {0.1 * double(k + 1), 0.5, 1.0 - 0.1 * double(k)});
        v.mask = scene.render(cam).mask;
        views.push_back(std::move(v));
    }
    return views;
}

constexpr double kSpacing = 0.03;
constexpr double kSplat = 1.5 * kSpacing;
constexpr double kEps = 2.0 * kSpacing;

} // namespace

TEST_CASE("single assignment") {
    TexturedPointCloud c({{0, 0, 0}, {1, 0, 0}}, 0.1);
    CHECK(c.colored_count() == 0);
    c.assign(1, {0.2, 0.3, 0.4}, 2);
    CHECK(c.colored(1));
    CHECK(c.source_views()[1] == 2);
    CHECK_THROWS_AS(c.assign(1, {0, 0, 0}, 3), std::logic_error);
    CHECK_THROWS_AS(c.assign(0, {0, 0, 0}, -1), std::logic_error);
    CHECK(c.write_count() == 1);
    CHECK(c.colors()[1].y == 0.3);
    CHECK_THROWS_AS(TexturedPointCloud({{0, 0, 0}}, 0.0), std::invalid_argument);
}

TEST_CASE("projection geometry") {
    const CameraPose cam = small_camera(0.0);
    const auto p = project_points({Vec3{}, cam.position() + 2.0 * cam.forward() * -1.0}, 0.1, cam);
    CHECK(p[0].valid);
    CHECK(p[0].u == doctest::Approx(32.0));
    CHECK(p[0].v == doctest::Approx(32.0));
    CHECK(p[0].depth == doctest::Approx(3.0));
    CHECK(p[0].radius_px == doctest::Approx(0.1 * cam.focal_px() / 3.0));
    CHECK_FALSE(p[1].valid); // behind the camera

    int x = 0, y = 0;
    CHECK(projection_pixel(p[0], 64, 64, x, y));
    CHECK(x == 32);
    CHECK(y == 32);

    ProjectedPoint tiny{10.5, 20.5, 1.0, 0.1, true};
    int visits = 0;
    for_each_footprint_pixel(tiny, 64, 64, [&](int px, int py, double, double) {
        ++visits;
        CHECK(px == 10);
        CHECK(py == 20);
    });
    CHECK(visits == 1);
    ProjectedPoint wide{10.5, 20.5, 1.0, 1.0, true};
    visits = 0;
    for_each_footprint_pixel(wide, 64, 64, [&](int, int, double dx, double dy) {
        ++visits;
        CHECK(dx * dx + dy * dy <= 1.0);
    });
    CHECK(visits == 5);
}

TEST_CASE("visibility uses the splat z-buffer") {
    const CameraPose cam = small_camera(0.0);
    const Vec3 f = cam.forward();
    // Two points on the central ray, 0.5 apart, and one off to the side at the far depth.
    const TexturedPointCloud c({-0.25 * f, 0.25 * f, 0.25 * f + 0.8 * cam.right()}, 0.02);
    const auto vis = visible_points(c, cam, 0.05);
    CHECK(vis[0] == 1);
    CHECK(vis[1] == 0);
    CHECK(vis[2] == 1);
    CHECK(visible_points(c, cam, 0.6)[1] == 1); // tolerance beyond the separation
    CHECK_THROWS_AS(visible_points(c, cam, 0.0), std::invalid_argument);
}

TEST_CASE("project_view") {
    const CameraPose cam = small_camera(0.0);
    TexturedPointCloud c(fibonacci_sphere(3000, 0.5), kSplat);
    ViewImage v = flat_view(cam, {0.9, 0.2, 0.1});
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width / 2; ++x) v.mask.at(x, y) = 0.0;

    const std::size_t added = project_view(c, 0, cam, v.image, v.mask, kEps);
    CHECK(added > 300);
    CHECK(added == c.colored_count());
    const auto proj = project_points(c.positions(), kSplat, cam);
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!c.colored(i)) continue;
        CHECK(proj[i].u >= 32.0);                                    // right half only
        CHECK(dot(c.positions()[i], cam.position()) > 0.0);          // camera-facing hemisphere
        CHECK(length(c.colors()[i] - Vec3{0.9, 0.2, 0.1}) < 1e-12); // bilinear of a flat image
    }
    // Already colored points are left alone by a second pass.
    const ViewImage w = flat_view(cam, {0, 0, 1});
    const std::size_t more = project_view(c, 1, cam, w.image, w.mask, kEps);
    CHECK(more > 300);
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c.source_views()[i] == 0) CHECK(c.colors()[i].x == doctest::Approx(0.9));

    CHECK_THROWS_AS(project_view(c, 2, cam, Image(8, 8, 3), Image(8, 8, 1), kEps), DimensionError);
}

TEST_CASE("reproject_mask covers visible colored splats only") {
    const CameraPose cam = small_camera(0.0);
    TexturedPointCloud c(fibonacci_sphere(3000, 0.5), kSplat);
    const Image empty = reproject_mask(c, cam, kEps);
    CHECK(std::count(empty.data().begin(), empty.data().end(), 1.0) == 0);

    // Color only far-side points: nothing of them is visible from this camera.
    for (std::size_t i = 0; i < c.size(); ++i)
        if (dot(c.positions()[i], cam.position()) < -0.5) c.assign(i, {1, 1, 1}, 0);
    const Image hidden = reproject_mask(c, cam, kEps);
    CHECK(std::count(hidden.data().begin(), hidden.data().end(), 1.0) == 0);

    // A front-facing colored point marks exactly its footprint.
    std::size_t front = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (!c.colored(i) && dot(c.positions()[i] / 0.5, normalize(cam.position())) > 0.99) front = i;
    c.assign(front, {1, 1, 1}, 0);
    const Image one = reproject_mask(c, cam, kEps);
    const ProjectedPoint p = project_points({c.positions()[front]}, kSplat, cam)[0];
    Image expected(cam.width, cam.height, 1, 0.0);
    for_each_footprint_pixel(p, cam.width, cam.height, [&](int x, int y, double, double) { expected.at(x, y) = 1.0; });
    CHECK(one == expected);
}

TEST_CASE("two-view sphere") {
    const SyntheticScene scene(SceneSpec{});
    ViewImageSet views;
    for (double az : {0.0, 180.0}) {
        const CameraPose cam = far_camera(az, 384);
        ViewImage v = flat_view(cam, {0.8, 0.1, 0.3});
        v.mask = scene.render(cam).mask;
        views.push_back(std::move(v));
    }
    const double spacing = 0.02;
    TexturedPointCloud c(fibonacci_sphere(8000, 0.5), 1.5 * spacing);
    const ProjectionReport r = build_textured_cloud(c, views, 2.0 * spacing);
    MESSAGE("colored " << c.colored_count() << " of " << c.size());
    CHECK(c.write_count() == c.colored_count());
    CHECK(double(c.colored_count()) / double(c.size()) >= 0.95);
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c.colored(i)) CHECK(length(c.colors()[i] - Vec3{0.8, 0.1, 0.3}) < 1e-12);
    const oracle::ConflictAudit audit = oracle::audit_projection(c, views, 2.0 * spacing);
    CHECK(audit.colored == c.colored_count());
    CHECK(audit.wrong_source == 0);
    CHECK(audit.conflicts == 0);
    CHECK(r.uncolored == c.size() - c.colored_count());
}

TEST_CASE("build_textured_cloud on a ring of views") {
    const std::vector<double> az{0, 45, -45, 90, -90, 135, -135, 180};
    const ViewImageSet views = ring_views(az);
    TexturedPointCloud c(fibonacci_sphere(4000, 0.5), kSplat);
    const ProjectionReport r = build_textured_cloud(c, views, kEps);

    REQUIRE(r.newly_colored.size() == views.size());
    std::size_t total = 0;
    for (std::size_t n : r.newly_colored) total += n;
    CHECK(total == c.colored_count());
    CHECK(c.write_count() == c.colored_count());
    CHECK(r.uncolored == c.size() - c.colored_count());
    CHECK(r.newly_colored[1] > 0);
    CHECK(r.newly_colored[2] > 0);

    // Reference supremacy: everything the reference can see within its mask comes from it.
    TexturedPointCloud ref_only(c.positions(), kSplat);
    project_view(ref_only, 0, views[0].camera, views[0].image, views[0].mask, kEps);
    std::size_t from_ref = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        from_ref += c.source_views()[i] == 0;
        if (ref_only.colored(i)) {
            CHECK(c.source_views()[i] == 0);
            CHECK(c.colors()[i] == ref_only.colors()[i]);
        }
    }
    CHECK(from_ref == ref_only.colored_count());

    const oracle::ConflictAudit audit = oracle::audit_projection(c, views, kEps);
    CHECK(audit.colored == c.colored_count());
    CHECK(audit.wrong_source == 0);
    CHECK(audit.conflicts == 0);

    // Each point's color identifies its source view.
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!c.colored(i)) continue;
        const int s = c.source_views()[i];
        CHECK(c.colors()[i].x == doctest::Approx(0.1 * (s + 1)));
    }
}

TEST_CASE("visibility and reprojection examples") {
    const CameraPose front = small_camera(0.0, 128);
    const CameraPose back = small_camera(180.0, 128);
    const SyntheticScene scene(SceneSpec{});
    const Image object_front = scene.render(front).mask;
    const Image object_back = scene.render(back).mask;
    const auto count = [](const Image& m) { return std::count(m.data().begin(), m.data().end(), 1.0); };

    TexturedPointCloud c(fibonacci_sphere(8000, 0.5), 0.03);
    const auto vis = visible_points(c, front, 0.04);
    Vec3 centroid;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (vis[i]) centroid += c.positions()[i], ++n;
    CHECK(dot(centroid / double(n), front.position()) > 0.0);

    const TexturedPointCloud single({{0.1, 0.0, 0.0}}, 0.01);
    for (double az : {0.0, 70.0, 180.0, 250.0}) CHECK(visible_points(single, small_camera(az), 0.01)[0] == 1);

    // Front hemisphere colored, seen from behind: only the rim shows.
    for (std::size_t i = 0; i < c.size(); ++i)
        if (vis[i]) c.assign(i, {1, 1, 1}, 0);
    const Image rim = reproject_mask(c, back, 0.04);
    CHECK(double(count(rim)) < 0.15 * double(count(object_back)));

    // Fully colored, seen from the front: covers the object mask.
    for (std::size_t i = 0; i < c.size(); ++i)
        if (!c.colored(i)) c.assign(i, {1, 1, 1}, 1);
    const Image full = reproject_mask(c, front, 0.04);
    std::size_t covered = 0;
    for (std::size_t k = 0; k < full.data().size(); ++k) covered += object_front.data()[k] > 0.5 && full.data()[k] > 0.5;
    CHECK(double(covered) >= 0.99 * double(count(object_front)));

    TexturedPointCloud d(c.positions(), 0.03);
    const ViewImage red = flat_view(front, {1, 0, 0});
    CHECK(project_view(d, 0, front, red.image, Image(128, 128, 1, 0.0), 0.04) == 0);
    CHECK(project_view(d, 0, front, red.image, red.mask, 0.04) > 0);
    CHECK(project_view(d, 0, front, red.image, red.mask, 0.04) == 0);
}

TEST_CASE("build_textured_cloud errors") {
    TexturedPointCloud c(fibonacci_sphere(100, 0.5), kSplat);
    CHECK_THROWS_AS(build_textured_cloud(c, {}, kEps), std::invalid_argument);
    ViewImageSet views = ring_views({0, 90});
    views[1].mask = Image(32, 32, 1, 1.0);
    CHECK_THROWS_AS(build_textured_cloud(c, views, kEps), DimensionError);
}

TEST_CASE("view order") {
    const ViewImageSet views = ring_views({30, 200, 75, -20, 350, 120});
    const ViewImageSet ordered = order_views(views);
    std::vector<double> got;
    for (const ViewImage& v : ordered) got.push_back(std::round(rad_to_deg(wrap_angle(v.camera.azimuth))));
    // Offsets from 30: 170, 45, 50, 40, 90. The reference stays first.
    CHECK(got == std::vector<double>{30, 350, 75, 340, 120, 200});

    // Azimuth ordering makes the result independent of the input order.
    const ViewImageSet ring = ring_views({0, 45, -45, 90, -90, 180});
    TexturedPointCloud a(fibonacci_sphere(3000, 0.5), kSplat);
    build_textured_cloud(a, order_views(ring), kEps);
    ViewImageSet shuffled{ring[0], ring[5], ring[3], ring[1], ring[4], ring[2]};
    TexturedPointCloud b(a.positions(), kSplat);
    build_textured_cloud(b, order_views(shuffled), kEps);
    CHECK(a.colors() == b.colors());

    // Swapping two novel views only relabels points both of them see.
    const ViewImageSet pair = ring_views({0, 60, 100});
    ViewImageSet swapped{pair[0], pair[2], pair[1]};
    TexturedPointCloud p(a.positions(), kSplat);
    TexturedPointCloud q(a.positions(), kSplat);
    build_textured_cloud(p, pair, kEps);
    build_textured_cloud(q, swapped, kEps);
    const auto seen1 = visible_points(p, pair[1].camera, kEps);
    const auto seen2 = visible_points(p, pair[2].camera, kEps);
    std::size_t relabeled = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int sp = p.source_views()[i];
        const int sq = q.source_views()[i];
        CHECK((sp == 0) == (sq == 0));
        if (sp == 0) CHECK(p.colors()[i] == q.colors()[i]);
        if (sp != 0 && sp != kNoView && sq != kNoView && sp != (sq == 1 ? 2 : 1)) {
            ++relabeled;
            CHECK(seen1[i]);
            CHECK(seen2[i]);
        }
    }
    MESSAGE(relabeled << " points changed source view");
}

TEST_CASE("normal estimation") {
    std::vector<Vec3> plane;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) plane.push_back({0.01 * i, 0.01 * j, 0.3});
    plane.push_back({5, 5, 5});
    const auto n = estimate_normals(plane, 0.025);
    for (std::size_t i = 0; i + 1 < plane.size(); ++i) CHECK(std::abs(n[i].z) == doctest::Approx(1.0));
    CHECK(length(n.back()) == 0.0);
    CHECK(length(estimate_normals({{0, 0, 0}, {0.01, 0, 0}, {0.02, 0, 0}}, 0.05)[1]) == 0.0); // collinear

    const auto sphere = fibonacci_sphere(3000, 0.5);
    const auto sn = estimate_normals(sphere, 0.08);
    double worst = 1.0;
    for (std::size_t i = 0; i < sphere.size(); ++i) worst = std::min(worst, std::abs(dot(sn[i], sphere[i] / 0.5)));
    CHECK(worst > 0.99);
}

TEST_CASE("tilted disk depth") {
    CameraPose cam = small_camera(0.0, 64);
    cam.elevation = 0.0;
    // A disk at the origin facing 60 degrees away from the camera, tilted about the vertical axis.
    const Vec3 normal{std::sin(deg_to_rad(60.0)), 0.0, std::cos(deg_to_rad(60.0))};
    const ProjectedPoint p = project_points({Vec3{}}, {normal}, 0.2, cam)[0];
    REQUIRE(p.oriented);
    double d = 0.0;
    REQUIRE(p.depth_at(0.0, 0.0, d));
    CHECK(d == doctest::Approx(3.0));
    // Oracle: intersect the pixel ray with the plane in world space.
    for (double dx : {-4.0, -1.0, 2.5}) {
        const Vec3 dir = cam.ray_direction(p.u + dx, p.v);
        const double s = dot(normal, -1.0 * cam.position()) / dot(normal, dir);
        const Vec3 hit = cam.position() + s * dir;
        double got = 0.0;
        const bool inside = p.depth_at(dx, 0.0, got);
        CHECK(inside == (length(hit) <= 0.2));
        if (inside) CHECK(got == doctest::Approx(dot(hit - cam.position(), cam.forward())));
    }
    // A vertical offset leaves the plane depth unchanged (the tilt is horizontal).
    CHECK(p.depth_at(0.0, 3.0, d));
    CHECK(d == doctest::Approx(3.0));
}
