#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cit3d/config.hpp"

namespace cit3d {

struct RunOptions {
    bool deterministic = false;
    /// Progress lines (stage boundaries, periodic losses). May be empty.
    std::function<void(const std::string&)> log;
};

/// Artifact names inside the work directory.
namespace artifact {
inline constexpr const char* kSceneDescriptor = "scene.cfg";
inline constexpr const char* kReferenceRgb = "reference_rgb.png";
inline constexpr const char* kReferenceMask = "reference_mask.png";
inline constexpr const char* kReferenceDepth = "reference_depth.citd";
inline constexpr const char* kReferenceNormal = "reference_normal.png";
inline constexpr const char* kCoarseCheckpoint = "coarse.ckpt";
inline constexpr const char* kCoarseLog = "coarse_log.tsv";
inline constexpr const char* kCoarseMetrics = "coarse_metrics.json";
inline constexpr const char* kMesh = "mesh.obj";
inline constexpr const char* kSurfaceCloud = "surface_cloud.ply";
inline constexpr const char* kTexturedCloud = "textured_cloud.ply";
inline constexpr const char* kRefinedCloud = "refined_cloud.ply";
inline constexpr const char* kRefinedCheckpoint = "refined.ckpt";
inline constexpr const char* kRefineLog = "refine_log.tsv";
inline constexpr const char* kRefineMetrics = "refine_metrics.json";
inline constexpr const char* kExport = "export.ply";
inline constexpr int kTurntableFrames = 8;
std::string turntable_frame(int i); // turntable_00.png ...
} // namespace artifact

struct SynthReport {
    std::vector<std::filesystem::path> artifacts;
    std::size_t mask_pixels = 0;
};

struct CoarseReport {
    std::vector<std::filesystem::path> artifacts;
    double novel_psnr = 0.0;     // mean over the ring views at 360/8 degree steps, reference excluded
    double reference_psnr = 0.0; // full-frame, against the reference image
    double seconds = 0.0;
    std::vector<std::string> warnings;
};

struct RefineReport {
    std::vector<std::filesystem::path> artifacts;
    std::size_t mesh_vertices = 0;
    std::size_t mesh_faces = 0;
    std::size_t cloud_points = 0;
    std::size_t colored_points = 0;
    double iso = 0.0;
    // Splat renders of the textured cloud before and after refinement. Novel views are held out:
    // they sit halfway between the projection views.
    double novel_psnr_before = 0.0;
    double novel_psnr_after = 0.0;
    double reference_psnr_before = 0.0;
    double reference_psnr_after = 0.0;
    double seconds = 0.0;
};

struct ExportReport {
    std::vector<std::filesystem::path> artifacts;
    std::size_t points = 0;
};

/// Ground-truth reference rgb/mask/depth/normal of the configured scene plus its descriptor.
SynthReport run_synth(const RunConfig& config, const RunOptions& options = {});

/// Coarse field optimization from the synth outputs: checkpoint, training log, metrics.
CoarseReport run_coarse_cmd(const RunConfig& config, const RunOptions& options = {});

/// Mesh extraction, surface sampling, texture projection and deferred refinement.
RefineReport run_refine_cmd(const RunConfig& config, const RunOptions& options = {});

/// Standalone colored point cloud baked from the refined cloud and renderer.
ExportReport run_export_cmd(const RunConfig& config, const RunOptions& options = {});

/// Scene descriptor written by synth.
SyntheticScene load_scene_descriptor(const std::filesystem::path& path);

/// Reference bundle as written by synth, paired with the configured reference camera.
ReferenceBundle load_reference(const std::filesystem::path& work_dir, const CameraPose& camera);

/// Cameras at `count` equal azimuth steps around the reference, starting at the given offset.
std::vector<CameraPose> ring_cameras(const CameraPose& reference, int count, double offset_rad);

} // namespace cit3d
