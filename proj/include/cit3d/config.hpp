#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "cit3d/camera.hpp"
#include "cit3d/coarse.hpp"
#include "cit3d/extract.hpp"
#include "cit3d/guidance.hpp"
#include "cit3d/refine.hpp"
#include "cit3d/scene.hpp"

namespace cit3d {

struct CameraSettings {
    double azimuth_deg = 0.0;
    double elevation_deg = 15.0;
    double radius = 3.0;
    double fov_deg = 40.0;
    int width = 128;
    int height = 128;

    CameraPose pose() const;
};

struct FieldSettings {
    int resolution = 64;
    double bbox_half = 0.6; // cube [-h, h]^3 around the origin
    double init_density = -4.0;
    double init_albedo = 0.0;
};

struct RenderSettings {
    int samples = 64;       // training renders
    int eval_samples = 128; // metric and turntable renders
    double background = 1.0;
};

struct GuidanceSettings {
    std::string provider = "oracle";
    double lambda_ss2d = 1.0;
    double lambda_ss3d = 1.0;
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string weighting = "sigma2"; // sigma2 | uniform
    int t_min = 20;
    int t_max = 980;
    PromptSpec prompt{"sks", "ball", "a painted ball"};

    TimestepSchedule schedule() const;
};

struct CoarseSettings {
    int steps = 2000;
    std::string optimizer = "adam";
    double lr_density = 0.05;
    double lr_albedo = 0.05;
    double momentum = 0.0;
    double weight_reference = 1.0;
    double weight_depth = 0.1;
    double normal_probability = 0.25;
    double range_start_deg = 30.0;
    double growth_fraction = 0.5;
    double elevation_min_deg = 0.0;
    double elevation_max_deg = 30.0;
};

struct ExtractSettings {
    double iso = 0.0; // 0 selects the median-density rule
    int smooth_iterations = 5;
    double smooth_lambda = 0.5;
    double spacing = 0.015;
    int max_rejections = 1000;
};

struct TexprojSettings {
    int views = 8;
    double splat_radius_factor = 1.5;  // times extract.spacing
    double depth_epsilon_factor = 2.0; // times extract.spacing
    std::string order = "azimuth";     // azimuth | input
};

struct RefineSettings {
    int steps = 1000;
    double lr_features = 0.01;
    double lr_renderer = 0.001;
    std::string enhancer = "oracle";
    double strength = 1.0;
    double mask_threshold = 0.85;
    double rho_px = 1.0;
};

struct RunSettings {
    std::string work_dir = "work";
    std::uint64_t seed = 0;
};

/// Every tunable of a pipeline run. Text form: `section.key = value` lines, `#` comments.
struct RunConfig {
    SceneSpec scene;
    CameraSettings camera;
    FieldSettings field;
    RenderSettings render;
    GuidanceSettings guidance;
    CoarseSettings coarse;
    ExtractSettings extract;
    TexprojSettings texproj;
    RefineSettings refine;
    RunSettings run;

    /// Directory that relative paths are resolved against (the config file's directory).
    std::filesystem::path base_dir = ".";

    std::filesystem::path work_dir() const;

    /// Cross-key checks; throws ConfigError naming the key.
    void validate() const;
};

/// Parses config text over the defaults. Unknown, duplicate and malformed keys and out-of-range
/// values raise ConfigError naming the key.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = ".");
RunConfig load_config(const std::filesystem::path& path);

/// Overrides keys from `section.key = value` text (used for scene descriptors and tests).
void apply_config_text(RunConfig& config, std::istream& in, const std::string& only_section = {});

/// Canonical text form listing every key; parse_config(write) reproduces the config.
void write_config(std::ostream& out, const RunConfig& config, const std::string& only_section = {});

} // namespace cit3d
