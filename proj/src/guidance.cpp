#include "cit3d/guidance.hpp"

#include <cmath>
#include <stdexcept>

#include "cit3d/error.hpp"
#include "cit3d/scene.hpp"

namespace cit3d {

// ---------------------------------------------------------------------------------------------
// Prompts

void PromptSpec::validate() const {
    if (identifier.empty() || identifier.find_first_of(" \t\r\n") != std::string::npos) {
        throw std::invalid_argument("prompt identifier must be a single non-empty token");
    }
    if (class_name.empty()) throw std::invalid_argument("prompt class_name must be non-empty");
}

std::string_view to_string(Modality m) {
    switch (m) {
    case Modality::Depth: return "depth";
    case Modality::Normal: return "normal";
    case Modality::Mask: return "mask";
    case Modality::Rgb: return "rgb";
    }
    return "rgb";
}

Modality parse_modality(std::string_view token) {
    if (token == "depth") return Modality::Depth;
    if (token == "normal") return Modality::Normal;
    if (token == "mask") return Modality::Mask;
    if (token == "rgb") return Modality::Rgb;
    throw InvalidModalityError("unknown modality: " + std::string(token));
}

namespace {

std::string_view modality_phrase(Modality m) {
    switch (m) {
    case Modality::Depth: return "depth map";
    case Modality::Normal: return "normal map";
    case Modality::Mask: return "foreground mask";
    case Modality::Rgb: return "rgb photo";
    }
    return "rgb photo";
}

} // namespace

std::string build_prompt(const PromptSpec& spec, Modality modality, PromptPurpose purpose) {
    if (purpose == PromptPurpose::Finetune) {
        spec.validate();
        std::string out = "a ";
        out += modality_phrase(modality);
        out += " of ";
        out += spec.identifier;
        out += " ";
        out += spec.class_name;
        return out;
    }
    if (modality != Modality::Normal && modality != Modality::Rgb) {
        throw InvalidModalityError("shading prompts accept only the normal and rgb modalities, got " +
                                   std::string(to_string(modality)));
    }
    std::string out = spec.identifier;
    out += " ";
    out += modality_phrase(modality);
    out += " of ";
    out += spec.caption;
    return out;
}

std::string shading_prompt(const PromptSpec& spec, ShadingMode mode) {
    return build_prompt(spec, mode == ShadingMode::Normal ? Modality::Normal : Modality::Rgb, PromptPurpose::Shading);
}

// ---------------------------------------------------------------------------------------------
// Schedule

TimestepSchedule TimestepSchedule::linear_beta(int steps, double beta_start, double beta_end, Weighting weighting) {
    if (steps < 2) throw std::invalid_argument("schedule needs at least 2 steps");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start < beta_end)) {
        throw std::invalid_argument("schedule betas must satisfy 0 < beta_start < beta_end < 1");
    }
    TimestepSchedule s;
    s.alpha.resize(steps);
    s.sigma.resize(steps);
    s.weight.resize(steps);
    double alpha_bar = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double beta = beta_start + (beta_end - beta_start) * t / (steps - 1);
        alpha_bar *= 1.0 - beta;
        s.alpha[t] = std::sqrt(alpha_bar);
        s.sigma[t] = std::sqrt(1.0 - alpha_bar);
        s.weight[t] = weighting == Weighting::SigmaSquared ? 1.0 - alpha_bar : 1.0;
    }
    return s;
}

void TimestepSchedule::validate() const {
    const std::size_t n = alpha.size();
    if (n == 0 || sigma.size() != n || weight.size() != n) throw std::invalid_argument("schedule arrays mismatch");
    for (std::size_t t = 0; t < n; ++t) {
        if (std::abs(alpha[t] * alpha[t] + sigma[t] * sigma[t] - 1.0) > 1e-9) {
            throw std::invalid_argument("schedule is not variance preserving at t=" + std::to_string(t));
        }
        if (t > 0 && !(alpha[t] < alpha[t - 1])) {
            throw std::invalid_argument("schedule alpha must be strictly decreasing");
        }
        if (!(weight[t] > 0.0)) throw std::invalid_argument("schedule weights must be positive");
    }
}

namespace {

void check_timestep(const TimestepSchedule& s, int t) {
    if (t < 0 || t >= s.steps()) throw std::out_of_range("timestep " + std::to_string(t) + " outside schedule");
}

Image noisy_sample(const Image& x, const Image& eps, double a, double s) {
    require_same_shape(x, eps, "noisy_sample");
    Image z(x.width(), x.height(), x.channels());
    for (std::size_t i = 0; i < z.data().size(); ++i) z.data()[i] = a * x.data()[i] + s * eps.data()[i];
    return z;
}

double mean_squared(const Image& a, const Image& b) {
    require_same_shape(a, b, "dreambooth_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return s / std::max<std::size_t>(a.data().size(), 1);
}

void require_prediction_shape(const Image& in, const Image& out) {
    if (!in.same_shape(out)) throw DimensionError("guidance provider returned an image of the wrong shape");
}

} // namespace

// ---------------------------------------------------------------------------------------------
// Providers

Image NullProvider::predict_noise(const Image& noisy, std::string_view, int, const CameraPose&) const {
    return Image(noisy.width(), noisy.height(), noisy.channels(), 0.0);
}

Image NullProvider::predict_noise_3d(const Image& noisy, const Image&, const CameraPose&, int) const {
    return Image(noisy.width(), noisy.height(), noisy.channels(), 0.0);
}

AnalyticOracleProvider::AnalyticOracleProvider(std::shared_ptr<const SyntheticScene> scene, TimestepSchedule schedule,
                                               double background)
    : scene_(std::move(scene)), schedule_(std::move(schedule)), background_(background) {
    if (!scene_) throw std::invalid_argument("oracle provider needs a scene");
    schedule_.validate();
}

Image AnalyticOracleProvider::target(const CameraPose& camera, ShadingMode mode) const {
    return scene_->render_shaded(camera, mode, background_);
}

Image AnalyticOracleProvider::residual(const Image& noisy, const Image& target, int t) const {
    check_timestep(schedule_, t);
    require_same_shape(noisy, target, "oracle provider");
    const double a = schedule_.alpha[t];
    const double s = schedule_.sigma[t];
    Image out(noisy.width(), noisy.height(), noisy.channels());
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = (noisy.data()[i] - a * target.data()[i]) / s;
    return out;
}

Image AnalyticOracleProvider::predict_noise(const Image& noisy, std::string_view prompt, int t,
                                            const CameraPose& view) const {
    const ShadingMode mode =
        prompt.find("normal map") != std::string_view::npos ? ShadingMode::Normal : ShadingMode::Albedo;
    return residual(noisy, target(view, mode), t);
}

Image AnalyticOracleProvider::predict_noise_3d(const Image& noisy, const Image&, const CameraPose& camera,
                                               int t) const {
    return residual(noisy, target(camera, ShadingMode::Albedo), t);
}

std::unique_ptr<GuidanceProvider> make_provider(std::string_view name, std::shared_ptr<const SyntheticScene> scene,
                                                const TimestepSchedule& schedule, double background) {
    if (name == "zero") return std::make_unique<NullProvider>();
    if (name == "oracle") return std::make_unique<AnalyticOracleProvider>(std::move(scene), schedule, background);
    throw std::invalid_argument("unknown guidance provider: " + std::string(name));
}

// ---------------------------------------------------------------------------------------------
// Losses and gradients

double dreambooth_loss(const GuidanceProvider& denoiser, const Image& x, std::string_view c, const Image& x_o,
                       std::string_view c_o, double lambda, int t, int t_prime, const Image& eps,
                       const Image& eps_prime, const TimestepSchedule& schedule, DiffusionTarget target_kind,
                       const CameraPose& view) {
    if (lambda < 0.0) throw std::invalid_argument("prior preservation weight must be non-negative");
    check_timestep(schedule, t);
    check_timestep(schedule, t_prime);
    require_same_shape(x, eps, "dreambooth_loss (subject)");
    require_same_shape(x_o, eps_prime, "dreambooth_loss (prior)");

    const Image z = noisy_sample(x, eps, schedule.alpha[t], schedule.sigma[t]);
    const Image pred = denoiser.predict_noise(z, c, t, view);
    require_prediction_shape(z, pred);
    const Image& tgt = target_kind == DiffusionTarget::Data ? x : eps;
    double loss = schedule.weight[t] * mean_squared(pred, tgt);
    if (lambda == 0.0) return loss;

    const Image z_o = noisy_sample(x_o, eps_prime, schedule.alpha[t_prime], schedule.sigma[t_prime]);
    const Image pred_o = denoiser.predict_noise(z_o, c_o, t_prime, view);
    require_prediction_shape(z_o, pred_o);
    const Image& tgt_o = target_kind == DiffusionTarget::Data ? x_o : eps_prime;
    loss += lambda * schedule.weight[t_prime] * mean_squared(pred_o, tgt_o);
    return loss;
}

namespace {

template <class Predict>
Image sds_residual(const RenderedView& rendered, int t, const Image& eps, const TimestepSchedule& schedule,
                   const LatentEncoder& encoder, bool null_guidance, Predict&& predict) {
    check_timestep(schedule, t);
    const Image& img = rendered.rgb;
    if (null_guidance) return Image(img.width(), img.height(), img.channels(), 0.0);
    const Image latent = encoder.encode(img);
    require_same_shape(latent, eps, "sds gradient (noise)");
    const Image z = noisy_sample(latent, eps, schedule.alpha[t], schedule.sigma[t]);
    const Image pred = predict(z);
    require_prediction_shape(z, pred);
    Image d_latent(z.width(), z.height(), z.channels());
    const double w = schedule.weight[t];
    for (std::size_t i = 0; i < d_latent.data().size(); ++i) d_latent.data()[i] = w * (pred.data()[i] - eps.data()[i]);
    return encoder.backward(img, d_latent);
}

} // namespace

Image sds_2d_grad(const GuidanceProvider& provider, const RenderedView& rendered, std::string_view prompt, int t,
                  const Image& eps, const TimestepSchedule& schedule, const CameraPose& view,
                  const LatentEncoder& encoder) {
    return sds_residual(rendered, t, eps, schedule, encoder, provider.null_guidance(),
                        [&](const Image& z) { return provider.predict_noise(z, prompt, t, view); });
}

Image sds_3d_grad(const GuidanceProvider& provider, const RenderedView& rendered, const Image& ref_image,
                  const CameraPose& camera, int t, const Image& eps, const TimestepSchedule& schedule,
                  const LatentEncoder& encoder) {
    return sds_residual(rendered, t, eps, schedule, encoder, provider.null_guidance(),
                        [&](const Image& z) { return provider.predict_noise_3d(z, ref_image, camera, t); });
}

Image combine_guidance(const Image& g2d, const Image& g3d, double lambda_2d, double lambda_3d) {
    require_same_shape(g2d, g3d, "combine_guidance");
    Image out(g2d.width(), g2d.height(), g2d.channels());
    for (std::size_t i = 0; i < out.data().size(); ++i) {
        out.data()[i] = lambda_2d * g2d.data()[i] + lambda_3d * g3d.data()[i];
    }
    return out;
}

} // namespace cit3d
