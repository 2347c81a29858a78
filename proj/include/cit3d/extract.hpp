#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cit3d/field.hpp"
#include "cit3d/vec.hpp"

namespace cit3d {

/// Triangle mesh; faces are counter-clockwise when seen from outside.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;

    bool empty() const { return faces.empty(); }
    /// Throws std::invalid_argument on out-of-range indices or non-finite vertices.
    void validate() const;
    double area() const;
};

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);

/// Scalar samples on a regular lattice: value(ix, iy, iz) sits at origin + (ix, iy, iz) * spacing.
struct ScalarGrid {
    GridDims dims;
    Vec3 origin;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<double> values; // x-fastest

    ScalarGrid() = default;
    ScalarGrid(GridDims d, Vec3 o, Vec3 s, double fill = 0.0);

    std::size_t index(int ix, int iy, int iz) const {
        return (std::size_t(iz) * dims.ny + std::size_t(iy)) * dims.nx + std::size_t(ix);
    }
    double& at(int ix, int iy, int iz) { return values[index(ix, iy, iz)]; }
    double at(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
    Vec3 point(int ix, int iy, int iz) const {
        return origin + Vec3{ix * spacing.x, iy * spacing.y, iz * spacing.z};
    }
};

/// Iso-surface of `grid` separating values > iso (inside) from values <= iso. Ambiguous faces
/// are resolved by the mean of the four face corners, so neighbouring cells always agree and
/// the result is closed wherever the surface does not reach the lattice boundary. An empty
/// mesh signals that no cell crosses the level.
Mesh marching_cubes(const ScalarGrid& grid, double iso);

/// Activated densities sampled at voxel centers, padded by one layer of zeros so that
/// surfaces touching the bbox still close.
ScalarGrid density_grid(const VoxelField& field);
Mesh marching_cubes(const VoxelField& field, double iso);

/// Median of activated densities above 1e-3; 0 when no voxel qualifies.
double default_iso_level(const VoxelField& field);

/// Uniform Laplacian smoothing v <- v + lambda (mean(neighbours) - v), applied `iterations`
/// times with simultaneous updates. Boundary vertices (on edges used by a single face) stay put.
/// Zero-area faces are removed afterwards; their count goes to `removed_faces` when given.
Mesh regularize_mesh(const Mesh& mesh, int iterations, double lambda, std::size_t* removed_faces = nullptr);

struct SurfacePoint {
    Vec3 position;
    int face = -1;
    std::array<double, 3> bary{}; // weights of the face's three vertices
};

struct SurfaceCloud {
    std::vector<SurfacePoint> points;
    double target_spacing = 0.0;
    bool single_point = false; // spacing exceeded the mesh extent

    std::size_t size() const { return points.size(); }
};

struct PoissonOptions {
    std::uint64_t seed = 0;
    int max_rejections = 1000; // consecutive failed darts before stopping
};

/// Dart throwing: faces drawn by area, uniform barycentric positions, candidates closer than
/// `spacing` to an accepted point are rejected via a spatial hash.
SurfaceCloud poisson_sample(const Mesh& mesh, double spacing, const PoissonOptions& options = {});

} // namespace cit3d
