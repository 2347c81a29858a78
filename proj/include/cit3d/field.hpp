#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cit3d/camera.hpp"
#include "cit3d/image.hpp"
#include "cit3d/vec.hpp"

namespace cit3d {

enum class ShadingMode { Albedo, Normal };

std::string_view to_string(ShadingMode mode);
ShadingMode parse_shading_mode(std::string_view token);

struct GridDims {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    std::size_t count() const { return std::size_t(nx) * ny * nz; }
    friend bool operator==(const GridDims&, const GridDims&) = default;
};

double softplus(double x);
double inverse_softplus(double y);
double sigmoid(double x);
double logit(double p);

/// Dense voxel radiance field.
///
/// Parameters are stored pre-activation: density goes through softplus (so it is never
/// negative) and albedo through a sigmoid (so it stays in [0,1]). Activated copies are cached
/// and refreshed on every mutation; reads are safe from many threads as long as nobody writes.
class VoxelField {
  public:
    VoxelField() = default;
    VoxelField(GridDims dims, Aabb bbox, double raw_density = -4.0, double raw_albedo = 0.0);

    const GridDims& dims() const { return dims_; }
    const Aabb& bbox() const { return bbox_; }
    std::size_t voxel_count() const { return dims_.count(); }
    std::size_t parameter_count() const { return 4 * voxel_count(); }
    Vec3 voxel_size() const { return voxel_size_; }

    std::size_t index(int ix, int iy, int iz) const {
        return std::size_t(ix) + std::size_t(dims_.nx) * (std::size_t(iy) + std::size_t(dims_.ny) * iz);
    }
    Vec3 voxel_center(int ix, int iy, int iz) const;

    std::span<const double> raw_density() const { return raw_density_; }
    std::span<const double> raw_albedo() const { return raw_albedo_; }

    /// Activated density of voxel i.
    double density(std::size_t i) const { return activated_[4 * i]; }
    Vec3 albedo(std::size_t i) const {
        return {activated_[4 * i + 1], activated_[4 * i + 2], activated_[4 * i + 3]};
    }
    /// Interleaved [density, r, g, b] per voxel.
    std::span<const double> activated() const { return activated_; }
    /// Interleaved density gradient per voxel: central differences one voxel wide, one-sided on
    /// the grid boundary.
    std::span<const double> density_gradient() const { return gradient_; }

    /// Sets one voxel from activated values (density >= 0, albedo in (0,1); 0 and 1 map to +-inf).
    void set_voxel(int ix, int iy, int iz, double density, const Vec3& albedo);
    void set_voxel_density(int ix, int iy, int iz, double density);

    /// Mutates raw parameters in place: fn(span<double> raw_density, span<double> raw_albedo).
    template <class Fn>
    void update(Fn&& fn) {
        fn(std::span<double>(raw_density_), std::span<double>(raw_albedo_));
        refresh();
    }

    friend bool operator==(const VoxelField& a, const VoxelField& b) {
        return a.dims_ == b.dims_ && a.bbox_.lo == b.bbox_.lo && a.bbox_.hi == b.bbox_.hi &&
               a.raw_density_ == b.raw_density_ && a.raw_albedo_ == b.raw_albedo_;
    }

  private:
    void refresh();
    void refresh_voxel(std::size_t i);
    void refresh_gradient();
    void refresh_gradient_near(int ix, int iy, int iz);

    GridDims dims_;
    Aabb bbox_;
    Vec3 voxel_size_;
    std::vector<double> raw_density_;
    std::vector<double> raw_albedo_;
    std::vector<double> activated_;
    std::vector<double> gradient_;
};

/// Gradient w.r.t. raw (pre-activation) field parameters, same layout as the field.
struct FieldGradient {
    std::vector<double> density;
    std::vector<double> albedo; // 3 interleaved channels

    FieldGradient() = default;
    explicit FieldGradient(std::size_t voxels) : density(voxels, 0.0), albedo(3 * voxels, 0.0) {}

    FieldGradient& operator+=(const FieldGradient& o);
    FieldGradient& operator*=(double s);
    double norm() const;
};

/// Trilinear lookup weights over the 8 voxel centers surrounding a point.
struct TrilinearStencil {
    std::array<std::uint32_t, 8> index{};
    std::array<double, 8> weight{};
    bool inside = false;
};

TrilinearStencil trilinear_stencil(const VoxelField& field, const Vec3& p);

struct FieldSample {
    double density = 0.0;
    Vec3 albedo;
};

/// Trilinear interpolation of activated values; zero outside the box.
FieldSample sample_field(const VoxelField& field, const Vec3& p);

/// Activated density only.
double sample_density(const VoxelField& field, const Vec3& p);

/// Trilinear interpolation of the cached central-difference density gradient.
Vec3 sample_density_gradient(const VoxelField& field, const Vec3& p);

/// -grad(density)/|grad(density)|, gradient by central differences one voxel wide; zero vector
/// when the gradient magnitude is below 1e-8.
Vec3 field_normal(const VoxelField& field, const Vec3& p);

struct RenderOptions {
    int samples = 128;          // stratified samples between box entry and exit
    std::uint64_t seed = 0;     // fixes per-pixel jitter so forward and backward agree
    bool stratified = true;
    double background = 1.0;    // constant grey level composited behind the field
    double early_stop = 1e-4;   // stop marching once transmittance falls below this (0 = never)
    bool compute_normals = true;
    int workers = 1;
    const Image* pixel_mask = nullptr; // when set, only pixels with value > 0 are marched
};

struct RenderedView {
    Image rgb;    // H x W x 3
    Image depth;  // expected ray distance
    Image mask;   // accumulated opacity
    Image normal; // unit vectors, zero where nothing was hit
};

RenderedView render_view(const VoxelField& field, const CameraPose& camera, ShadingMode mode,
                         const RenderOptions& options = {});

/// Upstream gradients of some scalar w.r.t. render outputs. Empty images count as zero.
struct ViewGradient {
    Image rgb;
    Image depth;
    Image mask;
};

/// Reverse-mode gradient of the compositing expression evaluated by render_view with the same
/// options. Normal-mode gradients reach density only.
FieldGradient render_backward(const VoxelField& field, const CameraPose& camera, ShadingMode mode,
                              const ViewGradient& upstream, const RenderOptions& options = {});

/// Optional tagged payload appended after the field data in a checkpoint.
struct CheckpointSection {
    std::array<char, 4> tag{};
    std::vector<std::uint8_t> payload;
};

struct Checkpoint {
    VoxelField field;
    std::vector<CheckpointSection> sections;
};

void write_checkpoint(std::ostream& out, const VoxelField& field,
                      std::span<const CheckpointSection> sections = {});
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const VoxelField& field,
                     std::span<const CheckpointSection> sections = {});
Checkpoint load_checkpoint(const std::string& path);

} // namespace cit3d
