#include "cit3d/field.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cit3d/binary_io.hpp"
#include "cit3d/parallel.hpp"

namespace cit3d {

std::string_view to_string(ShadingMode mode) {
    return mode == ShadingMode::Albedo ? "albedo" : "normal";
}

ShadingMode parse_shading_mode(std::string_view token) {
    if (token == "albedo") return ShadingMode::Albedo;
    if (token == "normal") return ShadingMode::Normal;
    throw std::invalid_argument("unknown shading mode: " + std::string(token));
}

double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

double inverse_softplus(double y) {
    if (y <= 0.0) return -std::numeric_limits<double>::infinity();
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

// ---------------------------------------------------------------------------------------------
// VoxelField

VoxelField::VoxelField(GridDims dims, Aabb bbox, double raw_density, double raw_albedo)
    : dims_(dims), bbox_(bbox) {
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw std::invalid_argument("grid dims must be >= 1");
    if (!bbox.valid()) throw std::invalid_argument("bbox must have positive extent on all axes");
    const Vec3 ext = bbox.extent();
    voxel_size_ = {ext.x / dims.nx, ext.y / dims.ny, ext.z / dims.nz};
    raw_density_.assign(dims.count(), raw_density);
    raw_albedo_.assign(3 * dims.count(), raw_albedo);
    activated_.resize(4 * dims.count());
    gradient_.resize(3 * dims.count());
    refresh();
}

Vec3 VoxelField::voxel_center(int ix, int iy, int iz) const {
    return bbox_.lo + Vec3{(ix + 0.5) * voxel_size_.x, (iy + 0.5) * voxel_size_.y, (iz + 0.5) * voxel_size_.z};
}

void VoxelField::refresh_voxel(std::size_t i) {
    activated_[4 * i] = softplus(raw_density_[i]);
    for (int c = 0; c < 3; ++c) activated_[4 * i + 1 + c] = sigmoid(raw_albedo_[3 * i + c]);
}

namespace {

// Central difference along one axis, one-sided at the grid boundary.
double axis_difference(const std::vector<double>& act, std::size_t i, std::size_t stride, int coord, int n,
                       double h) {
    if (n == 1) return 0.0;
    if (coord == 0) return (act[4 * (i + stride)] - act[4 * i]) / h;
    if (coord == n - 1) return (act[4 * i] - act[4 * (i - stride)]) / h;
    return (act[4 * (i + stride)] - act[4 * (i - stride)]) / (2.0 * h);
}

} // namespace

void VoxelField::refresh() {
    for (std::size_t i = 0; i < voxel_count(); ++i) refresh_voxel(i);
    refresh_gradient();
}

void VoxelField::refresh_gradient() {
    const std::size_t sx = 1;
    const std::size_t sy = std::size_t(dims_.nx);
    const std::size_t sz = sy * dims_.ny;
    for (int iz = 0; iz < dims_.nz; ++iz) {
        for (int iy = 0; iy < dims_.ny; ++iy) {
            for (int ix = 0; ix < dims_.nx; ++ix) {
                const std::size_t i = index(ix, iy, iz);
                gradient_[3 * i] = axis_difference(activated_, i, sx, ix, dims_.nx, voxel_size_.x);
                gradient_[3 * i + 1] = axis_difference(activated_, i, sy, iy, dims_.ny, voxel_size_.y);
                gradient_[3 * i + 2] = axis_difference(activated_, i, sz, iz, dims_.nz, voxel_size_.z);
            }
        }
    }
}

void VoxelField::refresh_gradient_near(int ix, int iy, int iz) {
    const std::size_t sy = std::size_t(dims_.nx);
    const std::size_t sz = sy * dims_.ny;
    const int offsets[7][3] = {{0, 0, 0}, {-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (const auto& o : offsets) {
        const int jx = ix + o[0];
        const int jy = iy + o[1];
        const int jz = iz + o[2];
        if (jx < 0 || jy < 0 || jz < 0 || jx >= dims_.nx || jy >= dims_.ny || jz >= dims_.nz) continue;
        const std::size_t i = index(jx, jy, jz);
        gradient_[3 * i] = axis_difference(activated_, i, 1, jx, dims_.nx, voxel_size_.x);
        gradient_[3 * i + 1] = axis_difference(activated_, i, sy, jy, dims_.ny, voxel_size_.y);
        gradient_[3 * i + 2] = axis_difference(activated_, i, sz, jz, dims_.nz, voxel_size_.z);
    }
}

void VoxelField::set_voxel(int ix, int iy, int iz, double density, const Vec3& albedo) {
    const std::size_t i = index(ix, iy, iz);
    raw_density_[i] = inverse_softplus(density);
    for (int c = 0; c < 3; ++c) {
        const double a = albedo[c];
        raw_albedo_[3 * i + c] = a <= 0.0 ? -std::numeric_limits<double>::infinity()
                                 : a >= 1.0 ? std::numeric_limits<double>::infinity()
                                            : logit(a);
    }
    refresh_voxel(i);
    refresh_gradient_near(ix, iy, iz);
}

void VoxelField::set_voxel_density(int ix, int iy, int iz, double density) {
    const std::size_t i = index(ix, iy, iz);
    raw_density_[i] = inverse_softplus(density);
    refresh_voxel(i);
    refresh_gradient_near(ix, iy, iz);
}

FieldGradient& FieldGradient::operator+=(const FieldGradient& o) {
    for (std::size_t i = 0; i < density.size(); ++i) density[i] += o.density[i];
    for (std::size_t i = 0; i < albedo.size(); ++i) albedo[i] += o.albedo[i];
    return *this;
}

FieldGradient& FieldGradient::operator*=(double s) {
    for (double& v : density) v *= s;
    for (double& v : albedo) v *= s;
    return *this;
}

double FieldGradient::norm() const {
    double s = 0.0;
    for (double v : density) s += v * v;
    for (double v : albedo) s += v * v;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------------------------
// Point queries

TrilinearStencil trilinear_stencil(const VoxelField& field, const Vec3& p) {
    TrilinearStencil st;
    const Aabb& box = field.bbox();
    if (!box.contains(p)) return st;
    st.inside = true;
    const GridDims& d = field.dims();
    const Vec3 vs = field.voxel_size();
    const auto axis = [](double coord, double lo, double size, int n, int& i0, int& i1, double& f) {
        if (n == 1) {
            i0 = i1 = 0;
            f = 0.0;
            return;
        }
        double g = (coord - lo) / size - 0.5;
        g = g < 0.0 ? 0.0 : (g > n - 1 ? double(n - 1) : g);
        int base = static_cast<int>(g);
        if (base > n - 2) base = n - 2;
        i0 = base;
        i1 = base + 1;
        f = g - base;
    };
    int x0, x1, y0, y1, z0, z1;
    double fx, fy, fz;
    axis(p.x, box.lo.x, vs.x, d.nx, x0, x1, fx);
    axis(p.y, box.lo.y, vs.y, d.ny, y0, y1, fy);
    axis(p.z, box.lo.z, vs.z, d.nz, z0, z1, fz);
    const std::uint32_t sy = static_cast<std::uint32_t>(d.nx);
    const std::uint32_t sz = sy * static_cast<std::uint32_t>(d.ny);
    const std::uint32_t ys[2] = {y0 * sy, y1 * sy};
    const std::uint32_t zs[2] = {z0 * sz, z1 * sz};
    const std::uint32_t xs[2] = {std::uint32_t(x0), std::uint32_t(x1)};
    const double wx[2] = {1.0 - fx, fx};
    const double wy[2] = {1.0 - fy, fy};
    const double wz[2] = {1.0 - fz, fz};
    int k = 0;
    for (int dz = 0; dz < 2; ++dz) {
        for (int dy = 0; dy < 2; ++dy) {
            const double wyz = wy[dy] * wz[dz];
            const std::uint32_t base = ys[dy] + zs[dz];
            for (int dx = 0; dx < 2; ++dx, ++k) {
                st.index[k] = base + xs[dx];
                st.weight[k] = wx[dx] * wyz;
            }
        }
    }
    return st;
}

namespace {

constexpr double kMinGradient = 1e-8;

Vec3 stencil_gradient(const VoxelField& field, const TrilinearStencil& st) {
    Vec3 g;
    if (!st.inside) return g;
    const auto grad = field.density_gradient();
    for (int k = 0; k < 8; ++k) {
        const std::size_t b = 3 * std::size_t(st.index[k]);
        g += st.weight[k] * Vec3{grad[b], grad[b + 1], grad[b + 2]};
    }
    return g;
}

} // namespace

FieldSample sample_field(const VoxelField& field, const Vec3& p) {
    FieldSample out;
    const TrilinearStencil st = trilinear_stencil(field, p);
    if (!st.inside) return out;
    const auto act = field.activated();
    for (int k = 0; k < 8; ++k) {
        const std::size_t b = 4 * std::size_t(st.index[k]);
        const double w = st.weight[k];
        out.density += w * act[b];
        out.albedo += w * Vec3{act[b + 1], act[b + 2], act[b + 3]};
    }
    return out;
}

double sample_density(const VoxelField& field, const Vec3& p) {
    const TrilinearStencil st = trilinear_stencil(field, p);
    if (!st.inside) return 0.0;
    const auto act = field.activated();
    double s = 0.0;
    for (int k = 0; k < 8; ++k) s += st.weight[k] * act[4 * std::size_t(st.index[k])];
    return s;
}

Vec3 sample_density_gradient(const VoxelField& field, const Vec3& p) {
    return stencil_gradient(field, trilinear_stencil(field, p));
}

Vec3 field_normal(const VoxelField& field, const Vec3& p) {
    const Vec3 g = sample_density_gradient(field, p);
    const double len = length(g);
    if (len < kMinGradient) return {};
    return -g / len;
}

// ---------------------------------------------------------------------------------------------
// Volume rendering

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double unit_uniform(std::uint64_t& state) { return double(splitmix64(state) >> 11) * 0x1.0p-53; }

struct SampleRecord {
    double t = 0.0;
    double alpha = 0.0;
    double trans = 0.0; // transmittance before this sample
    Vec3 color;
    Vec3 normal;
    double grad_len = 0.0;
    TrilinearStencil stencil;
};

struct RayResult {
    Vec3 rgb;
    double mask = 0.0;
    double depth_sum = 0.0;
    Vec3 normal_sum;
    double bin = 0.0;
};

struct PixelRay {
    Vec3 origin;
    Vec3 dir;
    double t0 = 0.0;
    double t1 = 0.0;
    bool hit = false;
};

// Pinhole ray generation with the camera frame computed once per render.
class RayGenerator {
  public:
    RayGenerator(const VoxelField& field, const CameraPose& cam)
        : box_(field.bbox()), eye_(cam.position()), fw_(cam.forward()), rt_(cam.right()), up_(cam.up()),
          inv_f_(1.0 / cam.focal_px()), cx_(0.5 * cam.width), cy_(0.5 * cam.height) {}

    PixelRay operator()(int x, int y) const {
        PixelRay r;
        r.origin = eye_;
        r.dir = normalize(fw_ + ((x + 0.5 - cx_) * inv_f_) * rt_ - ((y + 0.5 - cy_) * inv_f_) * up_);
        r.hit = intersect_aabb(box_, r.origin, r.dir, r.t0, r.t1) && r.t1 > r.t0;
        return r;
    }

  private:
    Aabb box_;
    Vec3 eye_, fw_, rt_, up_;
    double inv_f_, cx_, cy_;
};

std::uint64_t pixel_seed(std::uint64_t seed, int x, int y, int width) {
    std::uint64_t s = seed ^ (0xD1B54A32D192ED03ull * (std::uint64_t(y) * std::uint64_t(width) + x + 1));
    splitmix64(s);
    return s;
}

// Marches one ray; when `records` is non-null every evaluated sample is kept for backward.
RayResult march(const VoxelField& field, const PixelRay& ray, ShadingMode mode, const RenderOptions& opt,
                std::uint64_t rng, bool want_normals, std::vector<SampleRecord>* records) {
    RayResult out;
    if (records) records->clear();
    const int n = std::max(opt.samples, 1);
    const double bin = (ray.t1 - ray.t0) / n;
    out.bin = bin;
    const double* act = field.activated().data();
    const double* grad = field.density_gradient().data();
    const bool need_normal = want_normals || mode == ShadingMode::Normal;
    double trans = 1.0;
    for (int i = 0; i < n; ++i) {
        const double jitter = opt.stratified ? unit_uniform(rng) : 0.5;
        const double t = ray.t0 + (i + jitter) * bin;
        const TrilinearStencil st = trilinear_stencil(field, ray.origin + t * ray.dir);
        if (!st.inside) continue;
        double sigma = 0.0;
        Vec3 color;
        Vec3 g;
        for (int k = 0; k < 8; ++k) {
            const double w = st.weight[k];
            const double* a = act + 4 * std::size_t(st.index[k]);
            sigma += w * a[0];
            if (mode == ShadingMode::Albedo) {
                color.x += w * a[1];
                color.y += w * a[2];
                color.z += w * a[3];
            }
            if (need_normal) {
                const double* gv = grad + 3 * std::size_t(st.index[k]);
                g.x += w * gv[0];
                g.y += w * gv[1];
                g.z += w * gv[2];
            }
        }
        const double alpha = -std::expm1(-sigma * bin);
        const double weight = trans * alpha;
        Vec3 normal;
        double grad_len = 0.0;
        if (need_normal) {
            grad_len = length(g);
            if (grad_len >= kMinGradient) normal = -g / grad_len;
            if (mode == ShadingMode::Normal) color = (normal + Vec3{1.0, 1.0, 1.0}) * 0.5;
        }
        if (records) {
            SampleRecord& r = records->emplace_back();
            r.t = t;
            r.alpha = alpha;
            r.trans = trans;
            r.color = color;
            r.normal = normal;
            r.grad_len = grad_len;
            r.stencil = st;
        }
        out.rgb += weight * color;
        out.mask += weight;
        out.depth_sum += weight * t;
        out.normal_sum += weight * normal;
        trans *= 1.0 - alpha;
        if (trans < opt.early_stop) break;
    }
    return out;
}

bool pixel_active(const RenderOptions& opt, int x, int y) {
    return opt.pixel_mask == nullptr || opt.pixel_mask->at(x, y) > 0.0;
}

// Folds gradients w.r.t. cached central differences back onto the activated densities.
void fold_gradient_channels(const VoxelField& field, std::vector<double>& total, const std::vector<double>& d_grad) {
    const GridDims& d = field.dims();
    const Vec3 h = field.voxel_size();
    const std::size_t stride[3] = {1, std::size_t(d.nx), std::size_t(d.nx) * d.ny};
    const int n[3] = {d.nx, d.ny, d.nz};
    for (int iz = 0; iz < d.nz; ++iz) {
        for (int iy = 0; iy < d.ny; ++iy) {
            for (int ix = 0; ix < d.nx; ++ix) {
                const std::size_t i = field.index(ix, iy, iz);
                const int coord[3] = {ix, iy, iz};
                for (int a = 0; a < 3; ++a) {
                    const double g = d_grad[3 * i + a];
                    if (g == 0.0 || n[a] == 1) continue;
                    if (coord[a] == 0) {
                        total[4 * (i + stride[a])] += g / h[a];
                        total[4 * i] -= g / h[a];
                    } else if (coord[a] == n[a] - 1) {
                        total[4 * i] += g / h[a];
                        total[4 * (i - stride[a])] -= g / h[a];
                    } else {
                        total[4 * (i + stride[a])] += g / (2.0 * h[a]);
                        total[4 * (i - stride[a])] -= g / (2.0 * h[a]);
                    }
                }
            }
        }
    }
}

} // namespace

RenderedView render_view(const VoxelField& field, const CameraPose& camera, ShadingMode mode,
                         const RenderOptions& options) {
    camera.validate();
    const int W = camera.width;
    const int H = camera.height;
    if (options.pixel_mask && (options.pixel_mask->width() != W || options.pixel_mask->height() != H)) {
        throw DimensionError("render_view: pixel mask does not match the camera resolution");
    }
    RenderedView view{Image(W, H, 3, options.background), Image(W, H, 1, 0.0), Image(W, H, 1, 0.0),
                      Image(W, H, 3, 0.0)};
    const RayGenerator rays(field, camera);
    const bool want_normals = options.compute_normals || mode == ShadingMode::Normal;
    parallel_for(0, H, options.workers, [&](int, int y0, int y1) {
        for (int y = y0; y < y1; ++y) {
            for (int x = 0; x < W; ++x) {
                if (!pixel_active(options, x, y)) continue;
                const PixelRay ray = rays(x, y);
                if (!ray.hit) continue;
                const RayResult r =
                    march(field, ray, mode, options, pixel_seed(options.seed, x, y, W), want_normals, nullptr);
                const double bg = (1.0 - r.mask) * options.background;
                for (int c = 0; c < 3; ++c) view.rgb.at(x, y, c) = r.rgb[c] + bg;
                view.mask.at(x, y) = r.mask;
                view.depth.at(x, y) = r.depth_sum / std::max(r.mask, 1e-6);
                if (want_normals && r.mask > 1e-4) {
                    const Vec3 nrm = normalize(r.normal_sum);
                    for (int c = 0; c < 3; ++c) view.normal.at(x, y, c) = nrm[c];
                }
            }
        }
    });
    return view;
}

FieldGradient render_backward(const VoxelField& field, const CameraPose& camera, ShadingMode mode,
                              const ViewGradient& upstream, const RenderOptions& options) {
    camera.validate();
    const int W = camera.width;
    const int H = camera.height;
    const auto check = [&](const Image& img, int channels, const char* what) {
        if (img.empty()) return false;
        if (img.width() != W || img.height() != H || img.channels() != channels) {
            throw DimensionError(std::string("render_backward: upstream ") + what +
                                 " does not match the camera resolution");
        }
        return true;
    };
    const bool has_rgb = check(upstream.rgb, 3, "rgb");
    const bool has_depth = check(upstream.depth, 1, "depth");
    const bool has_mask = check(upstream.mask, 1, "mask");
    if (options.pixel_mask && (options.pixel_mask->width() != W || options.pixel_mask->height() != H)) {
        throw DimensionError("render_backward: pixel mask does not match the camera resolution");
    }

    const std::size_t nvox = field.voxel_count();
    const bool normal_mode = mode == ShadingMode::Normal;
    const int workers = std::clamp(options.workers, 1, H);
    // Per-worker gradients w.r.t. activated values ([density, r, g, b] per voxel) and, in
    // normal mode, w.r.t. the cached density-gradient grid.
    std::vector<std::vector<double>> partial(workers, std::vector<double>(4 * nvox, 0.0));
    std::vector<std::vector<double>> partial_grad(workers);
    if (normal_mode) {
        for (auto& v : partial_grad) v.assign(3 * nvox, 0.0);
    }
    const RayGenerator rays(field, camera);

    parallel_for(0, H, workers, [&](int worker, int y0, int y1) {
        double* grad = partial[worker].data();
        double* grad_g = normal_mode ? partial_grad[worker].data() : nullptr;
        std::vector<SampleRecord> records;
        records.reserve(options.samples);
        for (int y = y0; y < y1; ++y) {
            for (int x = 0; x < W; ++x) {
                if (!pixel_active(options, x, y)) continue;
                const Vec3 g_rgb = has_rgb ? Vec3{upstream.rgb.at(x, y, 0), upstream.rgb.at(x, y, 1),
                                                  upstream.rgb.at(x, y, 2)}
                                           : Vec3{};
                const double g_depth = has_depth ? upstream.depth.at(x, y) : 0.0;
                const double g_mask = has_mask ? upstream.mask.at(x, y) : 0.0;
                if (g_rgb == Vec3{} && g_depth == 0.0 && g_mask == 0.0) continue;
                const PixelRay ray = rays(x, y);
                if (!ray.hit) continue;
                const RayResult r =
                    march(field, ray, mode, options, pixel_seed(options.seed, x, y, W), false, &records);
                const double A = r.mask;
                const double S = r.depth_sum;
                double g_A = g_mask - options.background * (g_rgb.x + g_rgb.y + g_rgb.z);
                if (A > 1e-6) g_A -= g_depth * S / (A * A);
                const double g_S = g_depth / std::max(A, 1e-6);

                // R accumulates sum_{k>i} G_k alpha_k prod_{i<j<k} (1 - alpha_j), so that
                // dL/dalpha_i = T_i (G_i - R_i) without dividing by (1 - alpha_i).
                double R = 0.0;
                for (int i = static_cast<int>(records.size()) - 1; i >= 0; --i) {
                    const SampleRecord& s = records[i];
                    const double w = s.trans * s.alpha;
                    const double G = dot(g_rgb, s.color) + g_A + g_S * s.t;
                    const double d_alpha = s.trans * (G - R);
                    R = G * s.alpha + (1.0 - s.alpha) * R;
                    const double d_sigma = d_alpha * r.bin * (1.0 - s.alpha);
                    const Vec3 d_color = w * g_rgb;
                    if (!normal_mode) {
                        for (int k = 0; k < 8; ++k) {
                            double* gv = grad + 4 * std::size_t(s.stencil.index[k]);
                            const double sw = s.stencil.weight[k];
                            gv[0] += sw * d_sigma;
                            gv[1] += sw * d_color.x;
                            gv[2] += sw * d_color.y;
                            gv[3] += sw * d_color.z;
                        }
                        continue;
                    }
                    Vec3 d_g;
                    if (s.grad_len >= kMinGradient) {
                        const Vec3 d_normal = 0.5 * d_color;
                        // n = -g/|g|  =>  dL/dg = -(I - n n^T) dL/dn / |g|
                        d_g = -(d_normal - s.normal * dot(s.normal, d_normal)) / s.grad_len;
                    }
                    for (int k = 0; k < 8; ++k) {
                        const std::size_t idx = s.stencil.index[k];
                        const double sw = s.stencil.weight[k];
                        grad[4 * idx] += sw * d_sigma;
                        double* gg = grad_g + 3 * idx;
                        gg[0] += sw * d_g.x;
                        gg[1] += sw * d_g.y;
                        gg[2] += sw * d_g.z;
                    }
                }
            }
        }
    });

    std::vector<double>& total = partial[0];
    for (int w = 1; w < workers; ++w) {
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += partial[w][i];
    }
    if (normal_mode) {
        for (int w = 1; w < workers; ++w) {
            for (std::size_t i = 0; i < partial_grad[0].size(); ++i) partial_grad[0][i] += partial_grad[w][i];
        }
        fold_gradient_channels(field, total, partial_grad[0]);
    }
    FieldGradient out(nvox);
    const auto raw_d = field.raw_density();
    const auto act = field.activated();
    for (std::size_t i = 0; i < nvox; ++i) {
        out.density[i] = total[4 * i] * sigmoid(raw_d[i]);
        for (int c = 0; c < 3; ++c) {
            const double a = act[4 * i + 1 + c];
            out.albedo[3 * i + c] = total[4 * i + 1 + c] * a * (1.0 - a);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Checkpoint container

namespace {
constexpr char kMagic[8] = {'C', 'I', 'T', '3', 'D', '0', '1', '\0'};
}

void write_checkpoint(std::ostream& out, const VoxelField& field, std::span<const CheckpointSection> sections) {
    out.write(kMagic, sizeof kMagic);
    const GridDims& d = field.dims();
    binio::write_u32(out, static_cast<std::uint32_t>(d.nx));
    binio::write_u32(out, static_cast<std::uint32_t>(d.ny));
    binio::write_u32(out, static_cast<std::uint32_t>(d.nz));
    for (double v : field.raw_density()) binio::write_f32(out, static_cast<float>(v));
    for (double v : field.raw_albedo()) binio::write_f32(out, static_cast<float>(v));
    const Aabb& b = field.bbox();
    for (double v : {b.lo.x, b.lo.y, b.lo.z, b.hi.x, b.hi.y, b.hi.z}) binio::write_f32(out, static_cast<float>(v));
    for (const CheckpointSection& s : sections) {
        out.write(s.tag.data(), 4);
        binio::write_u32(out, static_cast<std::uint32_t>(s.payload.size()));
        out.write(reinterpret_cast<const char*>(s.payload.data()), static_cast<std::streamsize>(s.payload.size()));
    }
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kMagic)) throw Error("checkpoint: bad magic");
    GridDims d;
    d.nx = static_cast<int>(binio::read_u32(in, "checkpoint dims"));
    d.ny = static_cast<int>(binio::read_u32(in, "checkpoint dims"));
    d.nz = static_cast<int>(binio::read_u32(in, "checkpoint dims"));
    if (d.nx < 1 || d.ny < 1 || d.nz < 1 || d.count() > (std::size_t(1) << 30)) {
        throw Error("checkpoint: implausible grid dimensions");
    }
    std::vector<double> dens(d.count());
    std::vector<double> alb(3 * d.count());
    for (double& v : dens) v = binio::read_f32(in, "checkpoint density");
    for (double& v : alb) v = binio::read_f32(in, "checkpoint albedo");
    double bb[6];
    for (double& v : bb) v = binio::read_f32(in, "checkpoint bbox");
    Checkpoint ck{VoxelField(d, Aabb{{bb[0], bb[1], bb[2]}, {bb[3], bb[4], bb[5]}}), {}};
    ck.field.update([&](std::span<double> rd, std::span<double> ra) {
        std::copy(dens.begin(), dens.end(), rd.begin());
        std::copy(alb.begin(), alb.end(), ra.begin());
    });
    while (true) {
        CheckpointSection s;
        in.read(s.tag.data(), 4);
        if (in.gcount() == 0) break;
        if (in.gcount() != 4) throw Error("checkpoint: truncated section tag");
        const std::uint32_t len = binio::read_u32(in, "checkpoint section length");
        s.payload.resize(len);
        in.read(reinterpret_cast<char*>(s.payload.data()), len);
        if (static_cast<std::uint32_t>(in.gcount()) != len) throw Error("checkpoint: truncated section payload");
        ck.sections.push_back(std::move(s));
    }
    return ck;
}

void save_checkpoint(const std::string& path, const VoxelField& field, std::span<const CheckpointSection> sections) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path, "cannot open for writing");
    write_checkpoint(out, field, sections);
    if (!out) throw IoError(path, "write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open for reading");
    try {
        return read_checkpoint(in);
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw IoError(path, e.what());
    }
}

} // namespace cit3d
