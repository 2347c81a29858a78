#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "cit3d/camera.hpp"
#include "cit3d/field.hpp"
#include "cit3d/guidance.hpp"
#include "cit3d/image.hpp"

namespace cit3d {

/// Reference-view inputs: image x, binary mask M, reference depth d_ref and a normal map.
struct ReferenceBundle {
    Image image;  // H x W x 3
    Image mask;   // H x W, values in {0, 1}
    Image depth;  // H x W, > 0 inside the mask
    Image normal; // H x W x 3; only consumed by fine-tuning prompts
    CameraPose camera;

    void validate() const;
    std::size_t mask_pixels() const;
};

/// Progressive azimuth schedule: the sampled arc around the reference azimuth widens from
/// `range_start` to the full circle, reaching 2*pi at `growth_fraction` of the run.
struct ViewSchedule {
    int total_steps = 1;
    double range_start = deg_to_rad(30.0);
    double growth_fraction = 0.5;
    double elevation_min = deg_to_rad(0.0);
    double elevation_max = deg_to_rad(30.0);
    CameraPose reference;

    double azimuth_range(int step) const;
};

CameraPose sample_camera(const ViewSchedule& schedule, int step, std::mt19937_64& rng);

struct LossAndGradient {
    double value = 0.0;
    Image gradient;
};

/// Masked mean-L1 photometric loss |x.M - I.M|; gradient w.r.t. the rendered rgb.
LossAndGradient reference_loss(const RenderedView& rendered, const ReferenceBundle& bundle);

/// Negative Pearson correlation between depths over pixels where mask > 0.5.
double depth_pearson_loss(const Image& d_ref, const Image& d, const Image& mask);
/// Same value plus the gradient w.r.t. `d`.
LossAndGradient depth_pearson_loss_with_grad(const Image& d_ref, const Image& d, const Image& mask);

struct OptimizerConfig {
    enum class Kind { Sgd, Adam };
    Kind kind = Kind::Sgd;
    double lr_density = 1.0;
    double lr_albedo = 1.0;
    double momentum = 0.0; // SGD only
    double beta1 = 0.9;    // Adam only
    double beta2 = 0.99;
    double epsilon = 1e-8;
};

std::string_view to_string(OptimizerConfig::Kind k);
OptimizerConfig::Kind parse_optimizer_kind(std::string_view token);

/// First-order optimizer over the raw field parameters with separate density / albedo rates.
class FieldOptimizer {
  public:
    FieldOptimizer(const OptimizerConfig& config, std::size_t voxels);
    void step(VoxelField& field, const FieldGradient& grad);

  private:
    OptimizerConfig config_;
    FieldGradient m_;
    FieldGradient v_;
    long long t_ = 0;
};

struct CoarseConfig {
    int steps = 2000;
    double weight_reference = 1.0;
    double weight_depth = 0.1;
    double lambda_ss2d = 1.0;
    double lambda_ss3d = 1.0;
    double normal_probability = 0.25;
    int t_min = 20;
    int t_max = 980;
    PromptSpec prompt;
    RenderOptions render;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
};

struct CoarseStepLog {
    int step = 0;
    double loss_ref = 0.0;
    double loss_depth = 0.0;
    double grad_norm_sds = 0.0;
    double azimuth_deg = 0.0;
    ShadingMode mode = ShadingMode::Albedo;
};

struct CoarseResult {
    VoxelField field;
    std::vector<CoarseStepLog> log;
    std::vector<std::string> warnings;
};

/// Coarse-stage optimization loop. Every step renders the reference view (albedo) under the
/// reference and depth losses, renders one scheduled novel view in a randomly drawn shading mode
/// under combined 2D/3D score distillation, and applies one optimizer update.
///
/// Throws DegenerateVarianceError when the reference mask has fewer than two pixels.
CoarseResult run_coarse(VoxelField field, const ReferenceBundle& bundle, const ViewSchedule& schedule,
                        const GuidanceProvider& provider_2d, const GuidanceProvider& provider_3d,
                        const TimestepSchedule& timesteps, const CoarseConfig& config,
                        const std::function<void(const CoarseStepLog&)>& on_step = {});

/// Tab-separated: step, loss_ref, loss_depth, grad_norm_sds, azimuth_deg, mode.
void write_training_log(std::ostream& out, const std::vector<CoarseStepLog>& log);

} // namespace cit3d
