#include "cit3d/extract.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace cit3d {

void Mesh::validate() const {
    for (const Vec3& v : vertices) {
        if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z)) {
            throw std::invalid_argument("mesh has a non-finite vertex");
        }
    }
    const int n = static_cast<int>(vertices.size());
    for (const auto& f : faces) {
        for (int i : f) {
            if (i < 0 || i >= n) throw std::invalid_argument("mesh face index out of range");
        }
    }
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * length(cross(b - a, c - a)); }

double Mesh::area() const {
    double s = 0.0;
    for (const auto& f : faces) s += triangle_area(vertices[f[0]], vertices[f[1]], vertices[f[2]]);
    return s;
}

ScalarGrid::ScalarGrid(GridDims d, Vec3 o, Vec3 s, double fill) : dims(d), origin(o), spacing(s) {
    if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw std::invalid_argument("scalar grid dims must be >= 1");
    values.assign(d.count(), fill);
}

// ---------------------------------------------------------------------------------------------
// Marching cubes

namespace {

// Corner k of a cell sits at offset (k & 1, (k >> 1) & 1, (k >> 2) & 1).
constexpr int corner_bit(int k, int axis) { return (k >> axis) & 1; }

struct CubeTables {
    int edge_of[8][8];         // cube edge joining two corners, -1 if not adjacent
    int edge_corner[12][2];    // lower corner first
    int edge_axis[12];
    int face_corner[6][4];     // counter-clockwise w.r.t. the outward normal
    int face_edge[6][4];       // edge between face_corner[j] and face_corner[j + 1]
    bool coplanar[12][12];     // the two edges lie on a common cell face

    CubeTables() {
        for (auto& row : edge_of) std::fill(std::begin(row), std::end(row), -1);
        int e = 0;
        for (int a = 0; a < 8; ++a) {
            for (int axis = 0; axis < 3; ++axis) {
                if (corner_bit(a, axis)) continue;
                const int b = a | (1 << axis);
                edge_of[a][b] = edge_of[b][a] = e;
                edge_corner[e][0] = a;
                edge_corner[e][1] = b;
                edge_axis[e] = axis;
                ++e;
            }
        }
        int f = 0;
        for (int axis = 0; axis < 3; ++axis) {
            const int b = (axis + 1) % 3;
            const int c = (axis + 2) % 3;
            for (int side = 0; side < 2; ++side) {
                // (0,0) (1,0) (1,1) (0,1) in the (b, c) plane runs counter-clockwise about +axis.
                const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
                int ring[4];
                for (int j = 0; j < 4; ++j) ring[j] = (side << axis) | (uv[j][0] << b) | (uv[j][1] << c);
                if (side == 0) std::swap(ring[1], ring[3]);
                for (int j = 0; j < 4; ++j) face_corner[f][j] = ring[j];
                for (int j = 0; j < 4; ++j) face_edge[f][j] = edge_of[ring[j]][ring[(j + 1) % 4]];
                ++f;
            }
        }
        for (auto& row : coplanar) std::fill(std::begin(row), std::end(row), false);
        for (int g = 0; g < 6; ++g)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) coplanar[face_edge[g][i]][face_edge[g][j]] = true;
    }
};

const CubeTables& tables() {
    static const CubeTables t;
    return t;
}

} // namespace

Mesh marching_cubes(const ScalarGrid& grid, double iso) {
    const GridDims& d = grid.dims;
    if (grid.values.size() != d.count()) throw std::invalid_argument("scalar grid size mismatch");
    const CubeTables& T = tables();
    Mesh mesh;
    if (d.nx < 2 || d.ny < 2 || d.nz < 2) return mesh;

    // Vertex id per lattice edge, keyed by (lower lattice point, axis).
    std::vector<int> edge_vertex(3 * d.count(), -1);
    const auto vertex_on = [&](int cx, int cy, int cz, int e) {
        const int a = T.edge_corner[e][0];
        const int b = T.edge_corner[e][1];
        const int ax = cx + corner_bit(a, 0), ay = cy + corner_bit(a, 1), az = cz + corner_bit(a, 2);
        const int bx = cx + corner_bit(b, 0), by = cy + corner_bit(b, 1), bz = cz + corner_bit(b, 2);
        const std::size_t key = 3 * grid.index(ax, ay, az) + T.edge_axis[e];
        int& id = edge_vertex[key];
        if (id < 0) {
            const double va = grid.at(ax, ay, az);
            const double vb = grid.at(bx, by, bz);
            const double s = (iso - va) / (vb - va);
            const Vec3 pa = grid.point(ax, ay, az);
            const Vec3 pb = grid.point(bx, by, bz);
            id = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(pa + s * (pb - pa));
        }
        return id;
    };

    for (int cz = 0; cz + 1 < d.nz; ++cz) {
        for (int cy = 0; cy + 1 < d.ny; ++cy) {
            for (int cx = 0; cx + 1 < d.nx; ++cx) {
                double val[8];
                bool in[8];
                int count = 0;
                for (int k = 0; k < 8; ++k) {
                    val[k] = grid.at(cx + corner_bit(k, 0), cy + corner_bit(k, 1), cz + corner_bit(k, 2));
                    in[k] = val[k] > iso;
                    count += in[k];
                }
                if (count == 0 || count == 8) continue;

                // Walk each face boundary; every iso segment runs from the crossing where the walk
                // enters the inside region to the crossing where it leaves.
                int next[12];
                std::fill(std::begin(next), std::end(next), -1);
                for (int f = 0; f < 6; ++f) {
                    int cross_edge[4];
                    bool entering[4];
                    int n = 0;
                    for (int j = 0; j < 4; ++j) {
                        const int c0 = T.face_corner[f][j];
                        const int c1 = T.face_corner[f][(j + 1) % 4];
                        if (in[c0] == in[c1]) continue;
                        cross_edge[n] = T.face_edge[f][j];
                        entering[n] = in[c1];
                        ++n;
                    }
                    if (n == 2) {
                        const int enter = entering[0] ? 0 : 1;
                        next[cross_edge[enter]] = cross_edge[1 - enter];
                    } else if (n == 4) {
                        double mean = 0.0;
                        for (int j = 0; j < 4; ++j) mean += val[T.face_corner[f][j]];
                        const bool joined = mean / 4.0 > iso;
                        for (int j = 0; j < 4; ++j) {
                            if (!entering[j]) continue;
                            next[cross_edge[j]] = cross_edge[joined ? (j + 3) % 4 : (j + 1) % 4];
                        }
                    }
                }

                bool used[12] = {};
                for (int start = 0; start < 12; ++start) {
                    if (next[start] < 0 || used[start]) continue;
                    int loop[12];
                    int len = 0;
                    for (int e = start; !used[e]; e = next[e]) {
                        used[e] = true;
                        loop[len++] = e;
                    }
                    // A fan diagonal lying in a cell face could be emitted by the neighbour too, so
                    // pick a fan apex whose diagonals all cross the interior.
                    int apex = -1;
                    for (int s = 0; s < len && apex < 0; ++s) {
                        bool interior = true;
                        for (int j = 2; j + 1 < len && interior; ++j) {
                            interior = !T.coplanar[loop[s]][loop[(s + j) % len]];
                        }
                        if (interior) apex = s;
                    }
                    int id[12];
                    for (int j = 0; j < len; ++j) id[j] = vertex_on(cx, cy, cz, loop[j]);
                    if (apex >= 0) {
                        for (int j = 1; j + 1 < len; ++j) {
                            mesh.faces.push_back({id[apex], id[(apex + j) % len], id[(apex + j + 1) % len]});
                        }
                        continue;
                    }
                    Vec3 c;
                    for (int j = 0; j < len; ++j) c += mesh.vertices[id[j]];
                    const int center = static_cast<int>(mesh.vertices.size());
                    mesh.vertices.push_back(c / double(len));
                    for (int j = 0; j < len; ++j) mesh.faces.push_back({center, id[j], id[(j + 1) % len]});
                }
            }
        }
    }
    return mesh;
}

ScalarGrid density_grid(const VoxelField& field) {
    const GridDims& d = field.dims();
    const Vec3 h = field.voxel_size();
    ScalarGrid grid({d.nx + 2, d.ny + 2, d.nz + 2}, field.voxel_center(0, 0, 0) - h, h, 0.0);
    for (int iz = 0; iz < d.nz; ++iz) {
        for (int iy = 0; iy < d.ny; ++iy) {
            for (int ix = 0; ix < d.nx; ++ix) grid.at(ix + 1, iy + 1, iz + 1) = field.density(field.index(ix, iy, iz));
        }
    }
    return grid;
}

Mesh marching_cubes(const VoxelField& field, double iso) { return marching_cubes(density_grid(field), iso); }

double default_iso_level(const VoxelField& field) {
    std::vector<double> v;
    for (std::size_t i = 0; i < field.voxel_count(); ++i) {
        const double s = field.density(i);
        if (s > 1e-3) v.push_back(s);
    }
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    if (v.size() % 2 == 1) return v[mid];
    const double upper = v[mid];
    const double lower = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lower + upper);
}

// ---------------------------------------------------------------------------------------------
// Regularization

Mesh regularize_mesh(const Mesh& mesh, int iterations, double lambda, std::size_t* removed_faces) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("smoothing lambda must be in [0, 1]");
    if (iterations < 0) throw std::invalid_argument("smoothing iterations must be non-negative");
    mesh.validate();
    Mesh out = mesh;
    const std::size_t nv = mesh.vertices.size();

    std::vector<std::pair<int, int>> edges;
    edges.reserve(3 * mesh.faces.size());
    for (const auto& f : mesh.faces) {
        for (int j = 0; j < 3; ++j) {
            const int a = f[j];
            const int b = f[(j + 1) % 3];
            if (a != b) edges.emplace_back(std::min(a, b), std::max(a, b));
        }
    }
    std::sort(edges.begin(), edges.end());
    std::vector<std::vector<int>> nbr(nv);
    std::vector<char> pinned(nv, 0);
    for (std::size_t i = 0; i < edges.size();) {
        std::size_t j = i;
        while (j < edges.size() && edges[j] == edges[i]) ++j;
        const auto [a, b] = edges[i];
        nbr[a].push_back(b);
        nbr[b].push_back(a);
        if (j - i == 1) pinned[a] = pinned[b] = 1;
        i = j;
    }

    std::vector<Vec3> next(nv);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t v = 0; v < nv; ++v) {
            next[v] = out.vertices[v];
            if (pinned[v] || nbr[v].empty()) continue;
            Vec3 mean;
            for (int u : nbr[v]) mean += out.vertices[u];
            mean = mean / double(nbr[v].size());
            next[v] = out.vertices[v] + lambda * (mean - out.vertices[v]);
        }
        out.vertices.swap(next);
    }

    Vec3 lo{1e300, 1e300, 1e300};
    Vec3 hi{-1e300, -1e300, -1e300};
    for (const Vec3& p : out.vertices) {
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    const double diag2 = nv ? dot(hi - lo, hi - lo) : 0.0;
    const double min_area = 1e-14 * diag2;
    const std::size_t before = out.faces.size();
    std::erase_if(out.faces, [&](const std::array<int, 3>& f) {
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) return true;
        return triangle_area(out.vertices[f[0]], out.vertices[f[1]], out.vertices[f[2]]) <= min_area;
    });
    if (removed_faces) *removed_faces = before - out.faces.size();
    return out;
}

// ---------------------------------------------------------------------------------------------
// Poisson-disk sampling

namespace {

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const {
        std::uint64_t h = std::uint64_t(k.x) * 0x9E3779B97F4A7C15ull;
        h ^= std::uint64_t(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
        h ^= std::uint64_t(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

} // namespace

SurfaceCloud poisson_sample(const Mesh& mesh, double spacing, const PoissonOptions& options) {
    if (!(spacing > 0.0)) throw std::invalid_argument("poisson spacing must be positive");
    if (mesh.empty()) throw std::invalid_argument("poisson sampling needs a non-empty mesh");
    if (options.max_rejections < 1) throw std::invalid_argument("max_rejections must be >= 1");
    mesh.validate();

    std::vector<double> cumulative(mesh.faces.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        const auto& f = mesh.faces[i];
        total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        cumulative[i] = total;
    }
    if (!(total > 0.0)) throw std::invalid_argument("poisson sampling needs a mesh with positive area");

    SurfaceCloud cloud;
    cloud.target_spacing = spacing;
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::unordered_map<CellKey, std::vector<int>, CellHash> cells;
    const auto cell_of = [&](const Vec3& p) {
        return CellKey{static_cast<std::int64_t>(std::floor(p.x / spacing)),
                       static_cast<std::int64_t>(std::floor(p.y / spacing)),
                       static_cast<std::int64_t>(std::floor(p.z / spacing))};
    };
    const double r2 = spacing * spacing;

    int rejections = 0;
    while (rejections < options.max_rejections) {
        const double pick = unit(rng) * total;
        const std::size_t fi = std::min<std::size_t>(
            std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin(), cumulative.size() - 1);
        const double s = std::sqrt(unit(rng));
        const double t = unit(rng);
        const std::array<double, 3> bary{1.0 - s, s * (1.0 - t), s * t};
        const auto& f = mesh.faces[fi];
        const Vec3 p = bary[0] * mesh.vertices[f[0]] + bary[1] * mesh.vertices[f[1]] + bary[2] * mesh.vertices[f[2]];

        const CellKey c = cell_of(p);
        bool ok = true;
        for (std::int64_t dz = -1; dz <= 1 && ok; ++dz) {
            for (std::int64_t dy = -1; dy <= 1 && ok; ++dy) {
                for (std::int64_t dx = -1; dx <= 1 && ok; ++dx) {
                    const auto it = cells.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == cells.end()) continue;
                    for (int j : it->second) {
                        const Vec3 q = cloud.points[j].position - p;
                        if (dot(q, q) < r2) {
                            ok = false;
                            break;
                        }
                    }
                }
            }
        }
        if (!ok) {
            ++rejections;
            continue;
        }
        rejections = 0;
        cells[c].push_back(static_cast<int>(cloud.points.size()));
        cloud.points.push_back({p, static_cast<int>(fi), bary});
    }
    cloud.single_point = cloud.points.size() == 1;
    return cloud;
}

} // namespace cit3d
