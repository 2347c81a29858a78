#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cit3d/camera.hpp"
#include "cit3d/field.hpp"
#include "cit3d/image.hpp"

namespace cit3d {

class SyntheticScene;

// ---------------------------------------------------------------------------------------------
// Prompts

struct PromptSpec {
    std::string identifier = "sks";
    std::string class_name;
    std::string caption;

    /// Throws std::invalid_argument unless identifier is one non-empty token and class_name is set.
    void validate() const;
};

enum class Modality { Depth, Normal, Mask, Rgb };
enum class PromptPurpose { Finetune, Shading };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view token);

/// Fine-tuning prompts: "a {depth map|normal map|foreground mask|rgb photo} of <id> <class>".
/// Shading prompts: "<id> normal map of <caption>" / "<id> rgb photo of <caption>".
/// Shading purpose accepts only Normal and Rgb; other modalities raise InvalidModalityError.
std::string build_prompt(const PromptSpec& spec, Modality modality, PromptPurpose purpose);

/// Shading prompt matched to a render mode (Albedo renders use the rgb-photo form).
std::string shading_prompt(const PromptSpec& spec, ShadingMode mode);

// ---------------------------------------------------------------------------------------------
// Noise schedule

/// Variance-preserving schedule: alpha_t^2 + sigma_t^2 = 1, alpha strictly decreasing in t.
struct TimestepSchedule {
    std::vector<double> alpha;
    std::vector<double> sigma;
    std::vector<double> weight;

    int steps() const { return static_cast<int>(alpha.size()); }

    enum class Weighting { SigmaSquared, Uniform };

    /// Linear-beta DDPM schedule: alpha_bar_t = prod_{s<=t} (1 - beta_s).
    static TimestepSchedule linear_beta(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02,
                                        Weighting weighting = Weighting::SigmaSquared);

    /// Throws std::invalid_argument if any invariant fails.
    void validate() const;
};

// ---------------------------------------------------------------------------------------------
// Providers

/// Noise predictor eps_phi behind the score-distillation gradients.
///
/// `view` tells the predictor which camera produced the image; text-conditioned backends may
/// ignore it. Implementations must return images with the input's shape.
class GuidanceProvider {
  public:
    virtual ~GuidanceProvider() = default;

    virtual Image predict_noise(const Image& noisy, std::string_view prompt, int t, const CameraPose& view) const = 0;
    virtual Image predict_noise_3d(const Image& noisy, const Image& reference, const CameraPose& camera,
                                   int t) const = 0;

    /// True when concurrent const calls are safe.
    virtual bool thread_safe() const { return false; }
    /// Null providers contribute no guidance at all.
    virtual bool null_guidance() const { return false; }
};

/// Emits zero guidance; used for ablations.
class NullProvider final : public GuidanceProvider {
  public:
    Image predict_noise(const Image& noisy, std::string_view, int, const CameraPose&) const override;
    Image predict_noise_3d(const Image& noisy, const Image&, const CameraPose&, int) const override;
    bool thread_safe() const override { return true; }
    bool null_guidance() const override { return true; }
};

/// Deterministic stand-in for a fine-tuned diffusion model:
///   eps(z_t, t) = (z_t - alpha_t * target) / sigma_t,
/// where target is the ground-truth render of the synthetic scene from the requested camera.
/// Prompts mentioning "normal map" select the normal-shaded target; the 3D entry point always
/// targets the rgb render.
class AnalyticOracleProvider final : public GuidanceProvider {
  public:
    AnalyticOracleProvider(std::shared_ptr<const SyntheticScene> scene, TimestepSchedule schedule,
                           double background = 1.0);

    Image predict_noise(const Image& noisy, std::string_view prompt, int t, const CameraPose& view) const override;
    Image predict_noise_3d(const Image& noisy, const Image& reference, const CameraPose& camera,
                           int t) const override;
    bool thread_safe() const override { return true; }

    Image target(const CameraPose& camera, ShadingMode mode) const;

  private:
    Image residual(const Image& noisy, const Image& target, int t) const;

    std::shared_ptr<const SyntheticScene> scene_;
    TimestepSchedule schedule_;
    double background_;
};

/// Factory for the `guidance.provider` config key: "oracle" or "zero".
std::unique_ptr<GuidanceProvider> make_provider(std::string_view name, std::shared_ptr<const SyntheticScene> scene,
                                                const TimestepSchedule& schedule, double background);

// ---------------------------------------------------------------------------------------------
// Losses and gradients

enum class DiffusionTarget { Data, Noise };

/// Squared-L2 (mean over all entries) subject-binding loss with prior preservation:
///   w_t |eps(a_t x + s_t e, c) - tgt|^2 + lambda w_t' |eps(a_t' x_o + s_t' e', c_o) - tgt_o|^2
/// with tgt = x (Data) or e (Noise). `view` is forwarded to the predictor.
double dreambooth_loss(const GuidanceProvider& denoiser, const Image& x, std::string_view c, const Image& x_o,
                       std::string_view c_o, double lambda, int t, int t_prime, const Image& eps,
                       const Image& eps_prime, const TimestepSchedule& schedule,
                       DiffusionTarget target_kind = DiffusionTarget::Data, const CameraPose& view = {});

/// Latent encoder z = E(I). The identity encoder is the only one shipped; its Jacobian is I.
class LatentEncoder {
  public:
    virtual ~LatentEncoder() = default;
    virtual Image encode(const Image& image) const = 0;
    /// Maps dL/dz to dL/dI.
    virtual Image backward(const Image& image, const Image& d_latent) const = 0;
};

class IdentityEncoder final : public LatentEncoder {
  public:
    Image encode(const Image& image) const override { return image; }
    Image backward(const Image&, const Image& d_latent) const override { return d_latent; }
};

/// Image-space 2D score-distillation gradient w(t) (eps_phi(z_t; prompt, t) - eps),
/// z_t = alpha_t E(I) + sigma_t eps.
Image sds_2d_grad(const GuidanceProvider& provider, const RenderedView& rendered, std::string_view prompt, int t,
                  const Image& eps, const TimestepSchedule& schedule, const CameraPose& view = {},
                  const LatentEncoder& encoder = IdentityEncoder{});

/// 3D-prior variant conditioned on the reference image and the camera pose.
Image sds_3d_grad(const GuidanceProvider& provider, const RenderedView& rendered, const Image& ref_image,
                  const CameraPose& camera, int t, const Image& eps, const TimestepSchedule& schedule,
                  const LatentEncoder& encoder = IdentityEncoder{});

/// lambda_2d * g2d + lambda_3d * g3d.
Image combine_guidance(const Image& g2d, const Image& g3d, double lambda_2d, double lambda_3d);

} // namespace cit3d
