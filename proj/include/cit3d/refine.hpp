#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cit3d/camera.hpp"
#include "cit3d/field.hpp"
#include "cit3d/image.hpp"
#include "cit3d/texproj.hpp"

namespace cit3d {

class SyntheticScene;

// ---------------------------------------------------------------------------------------------
// Enhancement

class ImageEnhancer {
  public:
    virtual ~ImageEnhancer() = default;
    /// Returns an image of the input's shape; strength in [0, 1].
    virtual Image enhance(const Image& image, const CameraPose& camera, double strength) const = 0;
};

class IdentityEnhancer final : public ImageEnhancer {
  public:
    Image enhance(const Image& image, const CameraPose&, double) const override { return image; }
};

/// Blends toward the ground-truth render: (1 - s) * image + s * truth.
class OracleEnhancer final : public ImageEnhancer {
  public:
    explicit OracleEnhancer(std::shared_ptr<const SyntheticScene> scene, double background = 1.0);
    Image enhance(const Image& image, const CameraPose& camera, double strength) const override;

  private:
    std::shared_ptr<const SyntheticScene> scene_;
    double background_;
};

/// Factory for `refine.enhancer`: "oracle" or "identity".
std::unique_ptr<ImageEnhancer> make_enhancer(std::string_view name, std::shared_ptr<const SyntheticScene> scene,
                                             double background);

/// Throws std::invalid_argument unless strength is in [0, 1] and images/cameras pair up.
std::vector<Image> enhance_views(const std::vector<Image>& images, const std::vector<CameraPose>& cameras,
                                 const ImageEnhancer& enhancer, double strength);

struct MaskCandidate {
    Image mask;
    double score = 0.0;
};

/// candidate.mask when score >= threshold, nerf_mask otherwise.
Image select_mask(const Image& nerf_mask, const MaskCandidate& candidate, double threshold);

// ---------------------------------------------------------------------------------------------
// Deferred rendering

inline constexpr int kFeatureChannels = 8;

/// Three 3x3 convolutions K -> H -> H -> 3 with tanh between them. The output is
///   sigmoid(conv3(...) + logit(clamp(F[0:3])))
/// so a zero last layer reproduces the first three feature channels.
class DeferredRenderer {
  public:
    static constexpr int kHidden = 8;

    DeferredRenderer();
    /// Hidden layers drawn from a scaled uniform distribution, last layer zero.
    static DeferredRenderer initialized(std::uint64_t seed);

    std::size_t parameter_count() const { return params_.size(); }
    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }

    struct Cache {
        Image input;
        Image act1, act2, out; // tanh activations and final rgb
    };

    /// features: H x W x kFeatureChannels. Returns H x W x 3.
    Image forward(const Image& features, Cache* cache = nullptr) const;

    /// Given dL/d(out), returns dL/d(features) and accumulates dL/d(params) into d_params.
    Image backward(const Cache& cache, const Image& d_out, std::vector<double>& d_params) const;

    bool operator==(const DeferredRenderer&) const = default;

  private:
    std::vector<double> params_;
};

/// Feature vectors per point, kFeatureChannels each, point-major.
struct PointFeatures {
    std::vector<double> values;

    std::size_t points() const { return values.size() / kFeatureChannels; }
    double* at(std::size_t i) { return values.data() + i * kFeatureChannels; }
    const double* at(std::size_t i) const { return values.data() + i * kFeatureChannels; }

    /// First three channels from the cloud's colors (0.5 for uncolored points), the rest zero.
    static PointFeatures from_cloud(const TexturedPointCloud& cloud);
};

struct SplatSettings {
    double rho_px = 1.0;        // Gaussian footprint width
    double depth_epsilon = 0.0; // z-buffer tolerance, world units
    double background = 1.0;
};

/// Per-pixel normalized splat weights for one camera. Positions are fixed during refinement,
/// so the plan is built once per view and reused.
struct SplatPlan {
    int width = 0;
    int height = 0;
    std::vector<std::size_t> offsets; // pixel p uses entries [offsets[p], offsets[p + 1])
    std::vector<std::uint32_t> point;
    std::vector<double> weight;
    Image coverage; // 1 where at least one splat contributes

    /// Splatted feature image (zero where uncovered).
    Image features(const PointFeatures& f) const;
    /// Scatters dL/d(feature image) back onto the points.
    void backward(const Image& d_features, std::vector<double>& d_points) const;
};

/// Splats passing the z-test (depth <= buffer + depth_epsilon) at a pixel contribute with
/// weight exp(-d^2 / (2 rho^2)), d the pixel-center distance, normalized per pixel.
SplatPlan build_splat_plan(const TexturedPointCloud& cloud, const CameraPose& camera, const SplatSettings& settings);

struct SplatOutput {
    Image rgb;
    Image feature_image;
    DeferredRenderer::Cache cache;
};

/// Renderer applied to the splatted feature image, composited over the background where no
/// splat lands.
SplatOutput splat_render(const SplatPlan& plan, const PointFeatures& features, const DeferredRenderer& renderer,
                         double background);
Image splat_render(const TexturedPointCloud& cloud, const PointFeatures& features, const DeferredRenderer& renderer,
                   const CameraPose& camera, const SplatSettings& settings);

struct SplatGradient {
    std::vector<double> points; // same layout as PointFeatures::values
    std::vector<double> renderer;
};

/// Reverse pass of splat_render for dL/d(rgb); accumulates into grad.
void splat_render_backward(const SplatPlan& plan, const SplatOutput& out, const DeferredRenderer& renderer,
                           const Image& d_rgb, SplatGradient& grad);

/// Colour the renderer assigns to each point when its feature fills the whole receptive field
/// (a constant 7x7 patch). Used to bake standalone colored exports.
std::vector<Vec3> decode_point_colors(const PointFeatures& features, const DeferredRenderer& renderer);

// ---------------------------------------------------------------------------------------------
// Optimization

struct RefineConfig {
    int steps = 1000;
    double lr_features = 0.01;
    double lr_renderer = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
    SplatSettings splat;
};

struct RefineStepLog {
    int step = 0;
    int view = 0; // pseudo view used alongside the reference
    double loss_ref = 0.0;
    double loss_pseudo = 0.0;
};

struct RefineResult {
    PointFeatures features;
    DeferredRenderer renderer;
    std::vector<RefineStepLog> log;
};

/// Adam on the L1 reference loss plus the L1 loss against one pseudo image per step (cycling
/// through the views). Channels 0..2 of reference-sourced points (source_view == 0) stay frozen.
RefineResult optimize_refine(const TexturedPointCloud& cloud, PointFeatures features, DeferredRenderer renderer,
                             const std::vector<CameraPose>& pseudo_cameras, const std::vector<Image>& pseudo_images,
                             const ViewImage& reference, const RefineConfig& config,
                             const std::function<void(const RefineStepLog&)>& on_step = {});

/// Mean absolute error over all pixels and channels, with its sign gradient.
double l1_loss(const Image& rendered, const Image& target, Image* gradient = nullptr);

/// Checkpoint section carrying the renderer parameters (tag "REND").
CheckpointSection renderer_section(const DeferredRenderer& renderer);
DeferredRenderer renderer_from_section(const CheckpointSection& section);

} // namespace cit3d
