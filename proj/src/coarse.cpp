#include "cit3d/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "cit3d/error.hpp"

namespace cit3d {

void ReferenceBundle::validate() const {
    camera.validate();
    if (image.width() != camera.width || image.height() != camera.height || image.channels() != 3) {
        throw DimensionError("reference image does not match the reference camera");
    }
    require_same_size(image, mask, "reference mask");
    require_same_size(image, depth, "reference depth");
    if (mask.channels() != 1 || depth.channels() != 1) throw DimensionError("mask and depth must be single channel");
    if (!normal.empty()) require_same_shape(image, normal, "reference normal");
    for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
        const double m = mask.data()[i];
        if (m != 0.0 && m != 1.0) throw std::invalid_argument("reference mask must be binary");
        if (m == 1.0 && !(std::isfinite(depth.data()[i]) && depth.data()[i] > 0.0)) {
            throw std::invalid_argument("reference depth must be finite and positive inside the mask");
        }
    }
}

std::size_t ReferenceBundle::mask_pixels() const {
    std::size_t n = 0;
    for (double m : mask.data()) n += m > 0.5 ? 1 : 0;
    return n;
}

// ---------------------------------------------------------------------------------------------
// View schedule

double ViewSchedule::azimuth_range(int step) const {
    constexpr double full = 2.0 * kPi;
    const double span = std::max(1.0, growth_fraction * (total_steps - 1));
    const double progress = std::min(1.0, std::max(0.0, step / span));
    return std::min(full, range_start + (full - range_start) * progress);
}

CameraPose sample_camera(const ViewSchedule& schedule, int step, std::mt19937_64& rng) {
    if (step < 0 || step >= schedule.total_steps) throw std::out_of_range("schedule step out of range");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double range = schedule.azimuth_range(step);
    CameraPose cam = schedule.reference;
    cam.azimuth = wrap_angle(schedule.reference.azimuth + (unit(rng) - 0.5) * range);
    cam.elevation = schedule.elevation_min + unit(rng) * (schedule.elevation_max - schedule.elevation_min);
    return cam;
}

// ---------------------------------------------------------------------------------------------
// Losses

LossAndGradient reference_loss(const RenderedView& rendered, const ReferenceBundle& bundle) {
    require_same_shape(rendered.rgb, bundle.image, "reference_loss");
    require_same_size(rendered.rgb, bundle.mask, "reference_loss mask");
    const Image& x = bundle.image;
    const Image& r = rendered.rgb;
    LossAndGradient out{0.0, Image(x.width(), x.height(), 3, 0.0)};
    const double norm = 1.0 / (double(x.pixel_count()) * 3.0);
    for (int y = 0; y < x.height(); ++y) {
        for (int xx = 0; xx < x.width(); ++xx) {
            const double m = bundle.mask.at(xx, y);
            if (m == 0.0) continue;
            for (int c = 0; c < 3; ++c) {
                const double diff = r.at(xx, y, c) * m - x.at(xx, y, c) * m;
                out.value += std::abs(diff);
                const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                out.gradient.at(xx, y, c) = sign * m * norm;
            }
        }
    }
    out.value *= norm;
    return out;
}

namespace {

struct PearsonTerms {
    std::vector<std::size_t> pixels;
    std::vector<double> a; // centered reference
    std::vector<double> b; // centered rendered
    double norm_a = 0.0;
    double norm_b = 0.0;
    double corr = 0.0;
};

PearsonTerms pearson_terms(const Image& d_ref, const Image& d, const Image& mask) {
    require_same_shape(d_ref, d, "depth_pearson_loss");
    require_same_size(d_ref, mask, "depth_pearson_loss mask");
    PearsonTerms p;
    for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
        if (mask.data()[i] > 0.5) p.pixels.push_back(i);
    }
    const std::size_t n = p.pixels.size();
    if (n < 2) throw DegenerateVarianceError("depth_pearson_loss needs at least two masked pixels");
    double mean_a = 0.0;
    double mean_b = 0.0;
    for (std::size_t i : p.pixels) {
        mean_a += d_ref.data()[i];
        mean_b += d.data()[i];
    }
    mean_a /= n;
    mean_b /= n;
    double cov = 0.0;
    double var_a = 0.0;
    double var_b = 0.0;
    p.a.reserve(n);
    p.b.reserve(n);
    for (std::size_t i : p.pixels) {
        const double a = d_ref.data()[i] - mean_a;
        const double b = d.data()[i] - mean_b;
        p.a.push_back(a);
        p.b.push_back(b);
        cov += a * b;
        var_a += a * a;
        var_b += b * b;
    }
    if (std::sqrt(var_a / n) < 1e-12 || std::sqrt(var_b / n) < 1e-12) {
        throw DegenerateVarianceError("depth_pearson_loss: masked depth is constant");
    }
    p.norm_a = std::sqrt(var_a);
    p.norm_b = std::sqrt(var_b);
    p.corr = std::clamp(cov / (p.norm_a * p.norm_b), -1.0, 1.0);
    return p;
}

} // namespace

double depth_pearson_loss(const Image& d_ref, const Image& d, const Image& mask) {
    return -pearson_terms(d_ref, d, mask).corr;
}

LossAndGradient depth_pearson_loss_with_grad(const Image& d_ref, const Image& d, const Image& mask) {
    const PearsonTerms p = pearson_terms(d_ref, d, mask);
    LossAndGradient out{-p.corr, Image(d.width(), d.height(), 1, 0.0)};
    // d corr / d d_j = a_j / (|a||b|) - corr * b_j / |b|^2 (centering terms vanish since sum b = 0)
    for (std::size_t k = 0; k < p.pixels.size(); ++k) {
        const double dcorr = p.a[k] / (p.norm_a * p.norm_b) - p.corr * p.b[k] / (p.norm_b * p.norm_b);
        out.gradient.data()[p.pixels[k]] = -dcorr;
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Optimizer

std::string_view to_string(OptimizerConfig::Kind k) { return k == OptimizerConfig::Kind::Adam ? "adam" : "sgd"; }

OptimizerConfig::Kind parse_optimizer_kind(std::string_view token) {
    if (token == "sgd") return OptimizerConfig::Kind::Sgd;
    if (token == "adam") return OptimizerConfig::Kind::Adam;
    throw std::invalid_argument("unknown optimizer: " + std::string(token));
}

FieldOptimizer::FieldOptimizer(const OptimizerConfig& config, std::size_t voxels)
    : config_(config), m_(voxels), v_(config.kind == OptimizerConfig::Kind::Adam ? voxels : 0) {}

void FieldOptimizer::step(VoxelField& field, const FieldGradient& grad) {
    if (config_.lr_density == 0.0 && config_.lr_albedo == 0.0) return;
    ++t_;
    const auto apply = [&](std::span<double> params, const std::vector<double>& g, std::vector<double>& m,
                           std::vector<double>* v, double lr) {
        if (lr == 0.0) return;
        if (config_.kind == OptimizerConfig::Kind::Sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                m[i] = config_.momentum * m[i] + g[i];
                params[i] -= lr * m[i];
            }
            return;
        }
        const double b1 = config_.beta1;
        const double b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, double(t_));
        const double c2 = 1.0 - std::pow(b2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            (*v)[i] = b2 * (*v)[i] + (1.0 - b2) * g[i] * g[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt((*v)[i] / c2) + config_.epsilon);
        }
    };
    const bool adam = config_.kind == OptimizerConfig::Kind::Adam;
    field.update([&](std::span<double> dens, std::span<double> alb) {
        apply(dens, grad.density, m_.density, adam ? &v_.density : nullptr, config_.lr_density);
        apply(alb, grad.albedo, m_.albedo, adam ? &v_.albedo : nullptr, config_.lr_albedo);
    });
}

// ---------------------------------------------------------------------------------------------
// Training loop

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (step * 4 + stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double image_norm(const Image& img) {
    double s = 0.0;
    for (double v : img.data()) s += v * v;
    return std::sqrt(s);
}

} // namespace

CoarseResult run_coarse(VoxelField field, const ReferenceBundle& bundle, const ViewSchedule& schedule,
                        const GuidanceProvider& provider_2d, const GuidanceProvider& provider_3d,
                        const TimestepSchedule& timesteps, const CoarseConfig& config,
                        const std::function<void(const CoarseStepLog&)>& on_step) {
    bundle.validate();
    timesteps.validate();
    if (config.t_min < 0 || config.t_max >= timesteps.steps() || config.t_min > config.t_max) {
        throw std::invalid_argument("coarse timestep range outside the schedule");
    }
    if (bundle.mask_pixels() < 2) {
        throw DegenerateVarianceError("reference mask has fewer than two pixels; depth correlation undefined");
    }

    CoarseResult result;
    FieldOptimizer optimizer(config.optimizer, field.voxel_count());
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> timestep(config.t_min, config.t_max);
    const std::string prompt_albedo = shading_prompt(config.prompt, ShadingMode::Albedo);
    const std::string prompt_normal = shading_prompt(config.prompt, ShadingMode::Normal);
    const bool guided = !(provider_2d.null_guidance() && provider_3d.null_guidance()) &&
                        (config.lambda_ss2d != 0.0 || config.lambda_ss3d != 0.0);

    for (int step = 0; step < config.steps; ++step) {
        CoarseStepLog entry;
        entry.step = step;
        FieldGradient grad(field.voxel_count());

        // Reference view: photometric + depth-correlation terms. Only masked pixels matter.
        RenderOptions ref_opts = config.render;
        ref_opts.seed = mix_seed(config.seed, step, 0);
        ref_opts.compute_normals = false;
        ref_opts.pixel_mask = &bundle.mask;
        const RenderedView ref_view = render_view(field, bundle.camera, ShadingMode::Albedo, ref_opts);
        const LossAndGradient ref = reference_loss(ref_view, bundle);
        entry.loss_ref = ref.value;
        ViewGradient ref_up;
        ref_up.rgb = ref.gradient;
        for (double& v : ref_up.rgb.data()) v *= config.weight_reference;
        if (config.weight_depth != 0.0) {
            try {
                LossAndGradient dl = depth_pearson_loss_with_grad(bundle.depth, ref_view.depth, bundle.mask);
                entry.loss_depth = dl.value;
                for (double& v : dl.gradient.data()) v *= config.weight_depth;
                ref_up.depth = std::move(dl.gradient);
            } catch (const DegenerateVarianceError& e) {
                result.warnings.push_back("step " + std::to_string(step) + ": depth term skipped: " + e.what());
            }
        }
        grad += render_backward(field, bundle.camera, ShadingMode::Albedo, ref_up, ref_opts);

        // Novel view under score distillation.
        const CameraPose cam = sample_camera(schedule, step, rng);
        const ShadingMode mode = unit(rng) < config.normal_probability ? ShadingMode::Normal : ShadingMode::Albedo;
        const int t = timestep(rng);
        entry.azimuth_deg = rad_to_deg(cam.azimuth);
        entry.mode = mode;
        if (guided) {
            RenderOptions nv_opts = config.render;
            nv_opts.seed = mix_seed(config.seed, step, 1);
            nv_opts.compute_normals = false;
            const RenderedView view = render_view(field, cam, mode, nv_opts);
            Image eps(view.rgb.width(), view.rgb.height(), 3);
            for (double& v : eps.data()) v = gauss(rng);
            const Image g2d = sds_2d_grad(provider_2d, view, mode == ShadingMode::Normal ? prompt_normal : prompt_albedo,
                                          t, eps, timesteps, cam);
            // The 3D prior is an rgb novel-view model; it only guides albedo renders.
            const Image g3d = mode == ShadingMode::Albedo
                                  ? sds_3d_grad(provider_3d, view, bundle.image, cam, t, eps, timesteps)
                                  : Image(g2d.width(), g2d.height(), 3, 0.0);
            ViewGradient up;
            up.rgb = combine_guidance(g2d, g3d, config.lambda_ss2d, config.lambda_ss3d);
            entry.grad_norm_sds = image_norm(up.rgb);
            grad += render_backward(field, cam, mode, up, nv_opts);
        }

        optimizer.step(field, grad);
        result.log.push_back(entry);
        if (on_step) on_step(entry);
    }
    result.field = std::move(field);
    return result;
}

void write_training_log(std::ostream& out, const std::vector<CoarseStepLog>& log) {
    char buf[256];
    for (const CoarseStepLog& e : log) {
        std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g\t%.9g\t%.6f\t%s\n", e.step, e.loss_ref, e.loss_depth,
                      e.grad_norm_sds, e.azimuth_deg, std::string(to_string(e.mode)).c_str());
        out << buf;
    }
}

} // namespace cit3d
