#include "cit3d/refine.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "cit3d/binary_io.hpp"
#include "cit3d/error.hpp"
#include "cit3d/scene.hpp"

namespace cit3d {

// ---------------------------------------------------------------------------------------------
// Enhancement

OracleEnhancer::OracleEnhancer(std::shared_ptr<const SyntheticScene> scene, double background)
    : scene_(std::move(scene)), background_(background) {
    if (!scene_) throw std::invalid_argument("oracle enhancer needs a scene");
}

Image OracleEnhancer::enhance(const Image& image, const CameraPose& camera, double strength) const {
    const Image truth = scene_->render(camera, background_).rgb;
    require_same_shape(image, truth, "oracle enhancer");
    Image out(image.width(), image.height(), image.channels());
    for (std::size_t i = 0; i < out.data().size(); ++i) {
        out.data()[i] = strength == 1.0 ? truth.data()[i]
                                        : (1.0 - strength) * image.data()[i] + strength * truth.data()[i];
    }
    return out;
}

std::unique_ptr<ImageEnhancer> make_enhancer(std::string_view name, std::shared_ptr<const SyntheticScene> scene,
                                             double background) {
    if (name == "identity") return std::make_unique<IdentityEnhancer>();
    if (name == "oracle") return std::make_unique<OracleEnhancer>(std::move(scene), background);
    throw std::invalid_argument("unknown enhancer: " + std::string(name));
}

std::vector<Image> enhance_views(const std::vector<Image>& images, const std::vector<CameraPose>& cameras,
                                 const ImageEnhancer& enhancer, double strength) {
    if (!(strength >= 0.0 && strength <= 1.0)) throw std::invalid_argument("enhance strength must be in [0, 1]");
    if (images.size() != cameras.size()) throw std::invalid_argument("enhance_views: image/camera count mismatch");
    std::vector<Image> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        Image e = enhancer.enhance(images[i], cameras[i], strength);
        if (!e.same_shape(images[i])) throw DimensionError("enhancer changed the image shape");
        out.push_back(std::move(e));
    }
    return out;
}

Image select_mask(const Image& nerf_mask, const MaskCandidate& candidate, double threshold) {
    require_same_shape(nerf_mask, candidate.mask, "select_mask");
    return candidate.score >= threshold ? candidate.mask : nerf_mask;
}

// ---------------------------------------------------------------------------------------------
// Deferred renderer

namespace {

constexpr int K = kFeatureChannels;
constexpr int Hd = DeferredRenderer::kHidden;
constexpr double kColorClamp = 1e-4;

struct Layer {
    int in;
    int out;
    std::size_t w; // offset of weights [out][in][3][3]
    std::size_t b; // offset of biases [out]
};

constexpr Layer kLayers[3] = {
    {K, Hd, 0, std::size_t(Hd) * K * 9},
    {Hd, Hd, std::size_t(Hd) * K * 9 + Hd, std::size_t(Hd) * K * 9 + Hd + std::size_t(Hd) * Hd * 9},
    {Hd, 3, std::size_t(Hd) * K * 9 + 2 * Hd + std::size_t(Hd) * Hd * 9,
     std::size_t(Hd) * K * 9 + 2 * Hd + std::size_t(Hd) * Hd * 9 + 3 * std::size_t(Hd) * 9},
};
constexpr std::size_t kParamCount = kLayers[2].b + 3;

Image conv3x3(const Image& in, const Layer& L, const double* p) {
    const int W = in.width();
    const int H = in.height();
    Image out(W, H, L.out);
    const double* w = p + L.w;
    const double* b = p + L.b;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double* o = &out.at(x, y);
            for (int c = 0; c < L.out; ++c) o[c] = b[c];
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= W) continue;
                    const double* src = in.data().data() + (std::size_t(sy) * W + sx) * L.in;
                    const double* wk = w + ky * 3 + kx;
                    for (int c = 0; c < L.out; ++c) {
                        const double* wc = wk + std::size_t(c) * L.in * 9;
                        double s = 0.0;
                        for (int i = 0; i < L.in; ++i) s += wc[i * 9] * src[i];
                        o[c] += s;
                    }
                }
            }
        }
    }
    return out;
}

// d_in and d_params accumulate.
void conv3x3_backward(const Image& in, const Image& d_out, const Layer& L, const double* p, Image* d_in,
                      double* d_p) {
    const int W = in.width();
    const int H = in.height();
    const double* w = p + L.w;
    double* dw = d_p + L.w;
    double* db = d_p + L.b;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double* g = d_out.data().data() + (std::size_t(y) * W + x) * L.out;
            bool any = false;
            for (int c = 0; c < L.out; ++c) {
                db[c] += g[c];
                any = any || g[c] != 0.0;
            }
            if (!any) continue;
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= W) continue;
                    const double* src = in.data().data() + (std::size_t(sy) * W + sx) * L.in;
                    double* dsrc = d_in ? &d_in->at(sx, sy) : nullptr;
                    const std::size_t k = std::size_t(ky) * 3 + kx;
                    for (int c = 0; c < L.out; ++c) {
                        if (g[c] == 0.0) continue;
                        const std::size_t base = std::size_t(c) * L.in * 9 + k;
                        for (int i = 0; i < L.in; ++i) {
                            dw[base + std::size_t(i) * 9] += g[c] * src[i];
                            if (dsrc) dsrc[i] += g[c] * w[base + std::size_t(i) * 9];
                        }
                    }
                }
            }
        }
    }
}

double clamp_color(double v) { return std::clamp(v, kColorClamp, 1.0 - kColorClamp); }

} // namespace

DeferredRenderer::DeferredRenderer() : params_(kParamCount, 0.0) {}

DeferredRenderer DeferredRenderer::initialized(std::uint64_t seed) {
    DeferredRenderer r;
    std::mt19937_64 rng(seed);
    for (int l = 0; l < 2; ++l) {
        const Layer& L = kLayers[l];
        const double a = 1.0 / std::sqrt(double(L.in) * 9.0);
        std::uniform_real_distribution<double> u(-a, a);
        for (std::size_t i = L.w; i < L.b; ++i) r.params_[i] = u(rng);
    }
    return r;
}

Image DeferredRenderer::forward(const Image& features, Cache* cache) const {
    if (features.channels() != K) throw DimensionError("deferred renderer expects kFeatureChannels inputs");
    const double* p = params_.data();
    Image act1 = conv3x3(features, kLayers[0], p);
    for (double& v : act1.data()) v = std::tanh(v);
    Image act2 = conv3x3(act1, kLayers[1], p);
    for (double& v : act2.data()) v = std::tanh(v);
    Image out = conv3x3(act2, kLayers[2], p);
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                double& o = out.at(x, y, c);
                o = sigmoid(o + logit(clamp_color(features.at(x, y, c))));
            }
        }
    }
    if (cache) {
        cache->input = features;
        cache->act1 = std::move(act1);
        cache->act2 = std::move(act2);
        cache->out = out;
    }
    return out;
}

Image DeferredRenderer::backward(const Cache& cache, const Image& d_out, std::vector<double>& d_params) const {
    require_same_shape(cache.out, d_out, "deferred renderer backward");
    if (d_params.size() != params_.size()) d_params.assign(params_.size(), 0.0);
    const int W = d_out.width();
    const int H = d_out.height();
    const double* p = params_.data();
    Image d_feat(W, H, K, 0.0);
    Image d_z(W, H, 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double o = cache.out.at(x, y, c);
                const double dz = d_out.at(x, y, c) * o * (1.0 - o);
                d_z.at(x, y, c) = dz;
                const double f = cache.input.at(x, y, c);
                if (f > kColorClamp && f < 1.0 - kColorClamp) d_feat.at(x, y, c) += dz / (f * (1.0 - f));
            }
        }
    }
    Image d_act2(W, H, Hd, 0.0);
    conv3x3_backward(cache.act2, d_z, kLayers[2], p, &d_act2, d_params.data());
    for (std::size_t i = 0; i < d_act2.data().size(); ++i) {
        const double a = cache.act2.data()[i];
        d_act2.data()[i] *= 1.0 - a * a;
    }
    Image d_act1(W, H, Hd, 0.0);
    conv3x3_backward(cache.act1, d_act2, kLayers[1], p, &d_act1, d_params.data());
    for (std::size_t i = 0; i < d_act1.data().size(); ++i) {
        const double a = cache.act1.data()[i];
        d_act1.data()[i] *= 1.0 - a * a;
    }
    conv3x3_backward(cache.input, d_act1, kLayers[0], p, &d_feat, d_params.data());
    return d_feat;
}

PointFeatures PointFeatures::from_cloud(const TexturedPointCloud& cloud) {
    PointFeatures f;
    f.values.assign(cloud.size() * K, 0.0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 c = cloud.colored(i) ? cloud.colors()[i] : Vec3{0.5, 0.5, 0.5};
        for (int k = 0; k < 3; ++k) f.at(i)[k] = c[k];
    }
    return f;
}

// ---------------------------------------------------------------------------------------------
// Splatting

SplatPlan build_splat_plan(const TexturedPointCloud& cloud, const CameraPose& camera, const SplatSettings& settings) {
    camera.validate();
    if (!(settings.rho_px > 0.0)) throw std::invalid_argument("splat rho must be positive");
    if (!(settings.depth_epsilon >= 0.0)) throw std::invalid_argument("splat depth epsilon must be non-negative");
    const int W = camera.width;
    const int H = camera.height;
    const auto proj = project_points(cloud, camera);
    const Image z = splat_depth_buffer(proj, W, H);

    struct Entry {
        std::uint32_t pixel;
        std::uint32_t point;
        double weight;
    };
    std::vector<Entry> entries;
    const double inv = 1.0 / (2.0 * settings.rho_px * settings.rho_px);
    for (std::size_t i = 0; i < proj.size(); ++i) {
        if (!proj[i].valid) continue;
        for_each_splat_pixel(proj[i], W, H, [&](int x, int y, double dx, double dy, double depth) {
            if (depth > z.at(x, y) + settings.depth_epsilon) return;
            entries.push_back({std::uint32_t(y * W + x), std::uint32_t(i), std::exp(-(dx * dx + dy * dy) * inv)});
        });
    }

    SplatPlan plan;
    plan.width = W;
    plan.height = H;
    plan.offsets.assign(std::size_t(W) * H + 1, 0);
    for (const Entry& e : entries) ++plan.offsets[e.pixel + 1];
    for (std::size_t p = 0; p < std::size_t(W) * H; ++p) plan.offsets[p + 1] += plan.offsets[p];
    plan.point.resize(entries.size());
    plan.weight.resize(entries.size());
    std::vector<std::size_t> cursor(plan.offsets.begin(), plan.offsets.end() - 1);
    for (const Entry& e : entries) {
        const std::size_t k = cursor[e.pixel]++;
        plan.point[k] = e.point;
        plan.weight[k] = e.weight;
    }
    plan.coverage = Image(W, H, 1, 0.0);
    for (std::size_t p = 0; p < std::size_t(W) * H; ++p) {
        double total = 0.0;
        for (std::size_t k = plan.offsets[p]; k < plan.offsets[p + 1]; ++k) total += plan.weight[k];
        if (total <= 0.0) continue;
        for (std::size_t k = plan.offsets[p]; k < plan.offsets[p + 1]; ++k) plan.weight[k] /= total;
        plan.coverage.data()[p] = 1.0;
    }
    return plan;
}

Image SplatPlan::features(const PointFeatures& f) const {
    Image img(width, height, K, 0.0);
    for (std::size_t p = 0; p < std::size_t(width) * height; ++p) {
        double* dst = img.data().data() + p * K;
        for (std::size_t k = offsets[p]; k < offsets[p + 1]; ++k) {
            const double* src = f.at(point[k]);
            const double w = weight[k];
            for (int c = 0; c < K; ++c) dst[c] += w * src[c];
        }
    }
    return img;
}

void SplatPlan::backward(const Image& d_features, std::vector<double>& d_points) const {
    for (std::size_t p = 0; p < std::size_t(width) * height; ++p) {
        const double* g = d_features.data().data() + p * K;
        for (std::size_t k = offsets[p]; k < offsets[p + 1]; ++k) {
            double* dst = d_points.data() + std::size_t(point[k]) * K;
            const double w = weight[k];
            for (int c = 0; c < K; ++c) dst[c] += w * g[c];
        }
    }
}

SplatOutput splat_render(const SplatPlan& plan, const PointFeatures& features, const DeferredRenderer& renderer,
                         double background) {
    SplatOutput out;
    out.feature_image = plan.features(features);
    out.rgb = renderer.forward(out.feature_image, &out.cache);
    for (std::size_t p = 0; p < plan.coverage.data().size(); ++p) {
        if (plan.coverage.data()[p] > 0.0) continue;
        for (int c = 0; c < 3; ++c) out.rgb.data()[3 * p + c] = background;
    }
    return out;
}

Image splat_render(const TexturedPointCloud& cloud, const PointFeatures& features, const DeferredRenderer& renderer,
                   const CameraPose& camera, const SplatSettings& settings) {
    if (features.points() != cloud.size()) throw DimensionError("feature count does not match the cloud");
    const SplatPlan plan = build_splat_plan(cloud, camera, settings);
    return splat_render(plan, features, renderer, settings.background).rgb;
}

void splat_render_backward(const SplatPlan& plan, const SplatOutput& out, const DeferredRenderer& renderer,
                           const Image& d_rgb, SplatGradient& grad) {
    require_same_shape(out.rgb, d_rgb, "splat_render_backward");
    Image d_r = d_rgb;
    for (std::size_t p = 0; p < plan.coverage.data().size(); ++p) {
        if (plan.coverage.data()[p] > 0.0) continue;
        for (int c = 0; c < 3; ++c) d_r.data()[3 * p + c] = 0.0;
    }
    const Image d_feat = renderer.backward(out.cache, d_r, grad.renderer);
    plan.backward(d_feat, grad.points);
}

// ---------------------------------------------------------------------------------------------
// Optimization

double l1_loss(const Image& rendered, const Image& target, Image* gradient) {
    require_same_shape(rendered, target, "l1_loss");
    const std::size_t n = rendered.data().size();
    if (gradient) *gradient = Image(rendered.width(), rendered.height(), rendered.channels(), 0.0);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = rendered.data()[i] - target.data()[i];
        s += std::abs(d);
        if (gradient) gradient->data()[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / double(n);
    }
    return n ? s / double(n) : 0.0;
}

namespace {

struct Adam {
    double lr;
    double b1;
    double b2;
    double eps;
    std::vector<double> m;
    std::vector<double> v;

    void step(std::vector<double>& x, const std::vector<double>& g, long long t, const std::vector<char>* frozen) {
        if (m.empty()) {
            m.assign(x.size(), 0.0);
            v.assign(x.size(), 0.0);
        }
        const double c1 = 1.0 - std::pow(b1, double(t));
        const double c2 = 1.0 - std::pow(b2, double(t));
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (frozen && (*frozen)[i]) continue;
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

} // namespace

RefineResult optimize_refine(const TexturedPointCloud& cloud, PointFeatures features, DeferredRenderer renderer,
                             const std::vector<CameraPose>& pseudo_cameras, const std::vector<Image>& pseudo_images,
                             const ViewImage& reference, const RefineConfig& config,
                             const std::function<void(const RefineStepLog&)>& on_step) {
    if (features.points() != cloud.size()) throw DimensionError("feature count does not match the cloud");
    if (pseudo_cameras.size() != pseudo_images.size()) {
        throw std::invalid_argument("optimize_refine: pseudo camera/image count mismatch");
    }
    if (config.steps < 0) throw std::invalid_argument("refine steps must be non-negative");
    RefineResult result;
    if (config.steps == 0) {
        result.features = std::move(features);
        result.renderer = std::move(renderer);
        return result;
    }

    const SplatPlan ref_plan = build_splat_plan(cloud, reference.camera, config.splat);
    std::vector<SplatPlan> plans;
    plans.reserve(pseudo_cameras.size());
    for (std::size_t i = 0; i < pseudo_cameras.size(); ++i) {
        plans.push_back(build_splat_plan(cloud, pseudo_cameras[i], config.splat));
        require_same_shape(plans.back().coverage, Image(pseudo_images[i].width(), pseudo_images[i].height(), 1),
                           "pseudo image");
    }

    std::vector<char> frozen(features.values.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.source_views()[i] != 0) continue;
        for (int c = 0; c < 3; ++c) frozen[i * K + c] = 1;
    }
    Adam opt_f{config.lr_features, config.beta1, config.beta2, config.epsilon, {}, {}};
    Adam opt_r{config.lr_renderer, config.beta1, config.beta2, config.epsilon, {}, {}};

    SplatGradient grad;
    Image d_rgb;
    for (int step = 0; step < config.steps; ++step) {
        grad.points.assign(features.values.size(), 0.0);
        grad.renderer.assign(renderer.parameter_count(), 0.0);
        RefineStepLog entry;
        entry.step = step;

        const SplatOutput ref_out = splat_render(ref_plan, features, renderer, config.splat.background);
        entry.loss_ref = l1_loss(ref_out.rgb, reference.image, &d_rgb);
        splat_render_backward(ref_plan, ref_out, renderer, d_rgb, grad);

        if (!plans.empty()) {
            const std::size_t v = std::size_t(step) % plans.size();
            entry.view = static_cast<int>(v);
            const SplatOutput out = splat_render(plans[v], features, renderer, config.splat.background);
            entry.loss_pseudo = l1_loss(out.rgb, pseudo_images[v], &d_rgb);
            splat_render_backward(plans[v], out, renderer, d_rgb, grad);
        }

        opt_f.step(features.values, grad.points, step + 1, &frozen);
        opt_r.step(renderer.parameters(), grad.renderer, step + 1, nullptr);
        result.log.push_back(entry);
        if (on_step) on_step(entry);
    }
    result.features = std::move(features);
    result.renderer = std::move(renderer);
    return result;
}

std::vector<Vec3> decode_point_colors(const PointFeatures& features, const DeferredRenderer& renderer) {
    constexpr int kPatch = 7;
    std::vector<Vec3> colors(features.points());
    Image patch(kPatch, kPatch, K);
    for (std::size_t i = 0; i < features.points(); ++i) {
        const double* f = features.at(i);
        for (std::size_t p = 0; p < patch.pixel_count(); ++p) std::copy(f, f + K, patch.data().data() + p * K);
        const Image out = renderer.forward(patch);
        colors[i] = {out.at(kPatch / 2, kPatch / 2, 0), out.at(kPatch / 2, kPatch / 2, 1), out.at(kPatch / 2, kPatch / 2, 2)};
    }
    return colors;
}

// ---------------------------------------------------------------------------------------------
// Checkpoint section

CheckpointSection renderer_section(const DeferredRenderer& renderer) {
    std::ostringstream out(std::ios::binary);
    binio::write_u32(out, static_cast<std::uint32_t>(kFeatureChannels));
    binio::write_u32(out, static_cast<std::uint32_t>(DeferredRenderer::kHidden));
    binio::write_u32(out, static_cast<std::uint32_t>(renderer.parameter_count()));
    for (double p : renderer.parameters()) binio::write_f32(out, static_cast<float>(p));
    const std::string bytes = out.str();
    CheckpointSection s;
    s.tag = {'R', 'E', 'N', 'D'};
    s.payload.assign(bytes.begin(), bytes.end());
    return s;
}

DeferredRenderer renderer_from_section(const CheckpointSection& section) {
    if (section.tag != std::array<char, 4>{'R', 'E', 'N', 'D'}) throw IoError("", "not a renderer section");
    std::istringstream in(std::string(section.payload.begin(), section.payload.end()), std::ios::binary);
    const std::uint32_t k = binio::read_u32(in, "renderer section");
    const std::uint32_t hidden = binio::read_u32(in, "renderer section");
    const std::uint32_t count = binio::read_u32(in, "renderer section");
    DeferredRenderer r;
    if (k != kFeatureChannels || hidden != DeferredRenderer::kHidden || count != r.parameter_count()) {
        throw IoError("", "renderer section has an incompatible layout");
    }
    for (double& p : r.parameters()) p = binio::read_f32(in, "renderer section");
    return r;
}

} // namespace cit3d
