#include "cit3d/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "cit3d/io.hpp"
#include "cit3d/parallel.hpp"

namespace cit3d {

namespace fs = std::filesystem;

std::string artifact::turntable_frame(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "turntable_%02d.png", i);
    return buf;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void say(const RunOptions& o, const std::string& msg) {
    if (o.log) o.log(msg);
}

fs::path prepare_work_dir(const RunConfig& c) {
    const fs::path dir = c.work_dir();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create work directory: " + ec.message());
    return dir;
}

void require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw IoError(p.string(), "missing input (run the previous stage first)");
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw IoError(path.string(), "cannot open for writing");
    f << j.dump(2) << '\n';
    if (!f) throw IoError(path.string(), "write failed");
}

Image encode_normals(const Image& n) {
    Image out = n;
    for (double& v : out.data()) v = 0.5 * (v + 1.0);
    return out;
}

Image threshold(const Image& m, double level = 0.5) {
    Image out(m.width(), m.height(), 1);
    for (std::size_t i = 0; i < m.data().size(); ++i) out.data()[i] = m.data()[i] > level ? 1.0 : 0.0;
    return out;
}

RenderOptions eval_options(const RunConfig& c, int workers) {
    RenderOptions o;
    o.samples = c.render.eval_samples;
    o.background = c.render.background;
    o.stratified = false;
    o.compute_normals = false;
    o.workers = workers;
    return o;
}

SplatSettings splat_settings(const RunConfig& c) {
    SplatSettings s;
    s.rho_px = c.refine.rho_px;
    s.depth_epsilon = c.texproj.depth_epsilon_factor * c.extract.spacing;
    s.background = c.render.background;
    return s;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

CoarseConfig coarse_config(const RunConfig& c, int workers) {
    CoarseConfig cc;
    cc.steps = c.coarse.steps;
    cc.weight_reference = c.coarse.weight_reference;
    cc.weight_depth = c.coarse.weight_depth;
    cc.lambda_ss2d = c.guidance.lambda_ss2d;
    cc.lambda_ss3d = c.guidance.lambda_ss3d;
    cc.normal_probability = c.coarse.normal_probability;
    cc.t_min = c.guidance.t_min;
    cc.t_max = c.guidance.t_max;
    cc.prompt = c.guidance.prompt;
    cc.render.samples = c.render.samples;
    cc.render.background = c.render.background;
    cc.render.workers = workers;
    cc.optimizer.kind = parse_optimizer_kind(c.coarse.optimizer);
    cc.optimizer.lr_density = c.coarse.lr_density;
    cc.optimizer.lr_albedo = c.coarse.lr_albedo;
    cc.optimizer.momentum = c.coarse.momentum;
    cc.seed = c.run.seed;
    return cc;
}

} // namespace

std::vector<CameraPose> ring_cameras(const CameraPose& reference, int count, double offset_rad) {
    std::vector<CameraPose> cams;
    for (int k = 0; k < count; ++k) {
        cams.push_back(reference.with_azimuth(wrap_angle(reference.azimuth + offset_rad + 2.0 * kPi * k / count)));
    }
    return cams;
}

SyntheticScene load_scene_descriptor(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError(path.string(), "missing scene descriptor (run synth first)");
    RunConfig c;
    apply_config_text(c, f, "scene");
    c.scene.validate();
    return SyntheticScene(c.scene);
}

ReferenceBundle load_reference(const fs::path& dir, const CameraPose& camera) {
    for (const char* name : {artifact::kReferenceRgb, artifact::kReferenceMask, artifact::kReferenceDepth,
                             artifact::kReferenceNormal}) {
        require_file(dir / name);
    }
    ReferenceBundle b;
    b.camera = camera;
    b.image = read_png((dir / artifact::kReferenceRgb).string());
    b.mask = threshold(read_png((dir / artifact::kReferenceMask).string()));
    b.depth = read_depth((dir / artifact::kReferenceDepth).string());
    b.normal = read_png((dir / artifact::kReferenceNormal).string());
    for (double& v : b.normal.data()) v = 2.0 * v - 1.0;
    if (b.image.channels() != 3 || b.mask.channels() != 1 || b.normal.channels() != 3) {
        throw IoError(dir.string(), "reference images have unexpected channel counts");
    }
    if (b.image.width() != camera.width || b.image.height() != camera.height) {
        throw IoError((dir / artifact::kReferenceRgb).string(), "reference size does not match camera.width/height");
    }
    b.validate();
    return b;
}

// ---------------------------------------------------------------------------------------------

SynthReport run_synth(const RunConfig& config, const RunOptions& options) {
    config.validate();
    const fs::path dir = prepare_work_dir(config);
    const SyntheticScene scene(config.scene);
    const CameraPose cam = config.camera.pose();
    const SyntheticScene::Views v = scene.render(cam, config.render.background);

    SynthReport r;
    const auto out = [&](const char* name) {
        r.artifacts.push_back(dir / name);
        return (dir / name).string();
    };
    write_png(out(artifact::kReferenceRgb), v.rgb);
    write_png(out(artifact::kReferenceMask), v.mask);
    write_depth(out(artifact::kReferenceDepth), v.depth);
    write_png(out(artifact::kReferenceNormal), encode_normals(v.normal));
    {
        std::ofstream f(out(artifact::kSceneDescriptor));
        write_config(f, config, "scene");
        if (!f) throw IoError(r.artifacts.back().string(), "write failed");
    }
    for (double m : v.mask.data()) r.mask_pixels += m > 0.5;
    say(options, "synth: reference mask covers " + std::to_string(r.mask_pixels) + " pixels");
    return r;
}

CoarseReport run_coarse_cmd(const RunConfig& config, const RunOptions& options) {
    config.validate();
    const auto t0 = Clock::now();
    const fs::path dir = prepare_work_dir(config);
    const int workers = worker_count(options.deterministic);
    const auto scene = std::make_shared<const SyntheticScene>(load_scene_descriptor(dir / artifact::kSceneDescriptor));
    const CameraPose ref_cam = config.camera.pose();
    const ReferenceBundle bundle = load_reference(dir, ref_cam);

    const double h = config.field.bbox_half;
    const int n = config.field.resolution;
    VoxelField field({n, n, n}, Aabb{{-h, -h, -h}, {h, h, h}}, config.field.init_density, config.field.init_albedo);

    ViewSchedule schedule;
    schedule.total_steps = std::max(1, config.coarse.steps);
    schedule.range_start = deg_to_rad(config.coarse.range_start_deg);
    schedule.growth_fraction = config.coarse.growth_fraction;
    schedule.elevation_min = deg_to_rad(config.coarse.elevation_min_deg);
    schedule.elevation_max = deg_to_rad(config.coarse.elevation_max_deg);
    schedule.reference = ref_cam;

    const TimestepSchedule timesteps = config.guidance.schedule();
    const auto provider = make_provider(config.guidance.provider, scene, timesteps, config.render.background);
    const CoarseConfig cc = coarse_config(config, workers);

    say(options, "coarse: " + std::to_string(cc.steps) + " steps on a " + std::to_string(n) + "^3 grid");
    const int every = std::max(1, cc.steps / 20);
    CoarseResult res = run_coarse(std::move(field), bundle, schedule, *provider, *provider, timesteps, cc,
                                  [&](const CoarseStepLog& e) {
                                      if (e.step % every != 0 && e.step + 1 != cc.steps) return;
                                      char buf[128];
                                      std::snprintf(buf, sizeof buf, "coarse: step %d loss_ref %.5f loss_depth %.5f",
                                                    e.step, e.loss_ref, e.loss_depth);
                                      say(options, buf);
                                  });

    CoarseReport r;
    r.warnings = res.warnings;
    const fs::path ckpt = dir / artifact::kCoarseCheckpoint;
    save_checkpoint(ckpt.string(), res.field);
    r.artifacts.push_back(ckpt);
    {
        const fs::path p = dir / artifact::kCoarseLog;
        std::ofstream f(p);
        write_training_log(f, res.log);
        if (!f) throw IoError(p.string(), "write failed");
        r.artifacts.push_back(p);
    }

    // Metrics are taken on the saved (f32) parameters so they describe the checkpoint.
    const VoxelField saved = load_checkpoint(ckpt.string()).field;
    const RenderOptions eo = eval_options(config, workers);
    std::vector<double> novel;
    const std::vector<CameraPose> ring = ring_cameras(ref_cam, artifact::kTurntableFrames, 0.0);
    for (std::size_t k = 1; k < ring.size(); ++k) {
        const CameraPose& cam = ring[k];
        novel.push_back(psnr(render_view(saved, cam, ShadingMode::Albedo, eo).rgb,
                             scene->render(cam, config.render.background).rgb));
    }
    r.novel_psnr = mean(novel);
    r.reference_psnr = psnr(render_view(saved, ref_cam, ShadingMode::Albedo, eo).rgb, bundle.image);
    r.seconds = seconds_since(t0);

    nlohmann::json j;
    j["steps"] = cc.steps;
    j["novel_psnr"] = r.novel_psnr;
    j["novel_psnr_per_view"] = novel;
    j["reference_psnr"] = r.reference_psnr;
    j["seconds"] = r.seconds;
    j["warnings"] = r.warnings.size();
    write_json(dir / artifact::kCoarseMetrics, j);
    r.artifacts.push_back(dir / artifact::kCoarseMetrics);

    char buf[160];
    std::snprintf(buf, sizeof buf, "coarse: novel PSNR %.2f dB, reference PSNR %.2f dB, %.1f s", r.novel_psnr,
                  r.reference_psnr, r.seconds);
    say(options, buf);
    return r;
}

RefineReport run_refine_cmd(const RunConfig& config, const RunOptions& options) {
    config.validate();
    const auto t0 = Clock::now();
    const fs::path dir = prepare_work_dir(config);
    const int workers = worker_count(options.deterministic);
    require_file(dir / artifact::kCoarseCheckpoint);
    const auto scene = std::make_shared<const SyntheticScene>(load_scene_descriptor(dir / artifact::kSceneDescriptor));
    const CameraPose ref_cam = config.camera.pose();
    const ReferenceBundle bundle = load_reference(dir, ref_cam);
    const VoxelField field = load_checkpoint((dir / artifact::kCoarseCheckpoint).string()).field;
    RefineReport r;
    const auto out = [&](const std::string& name) {
        r.artifacts.push_back(dir / name);
        return (dir / name).string();
    };

    // Geometry: iso-surface, smoothing, blue-noise surface samples.
    r.iso = config.extract.iso > 0.0 ? config.extract.iso : default_iso_level(field);
    if (!(r.iso > 0.0)) throw Error("coarse field has no density above the iso threshold");
    const Mesh raw = marching_cubes(field, r.iso);
    if (raw.empty()) throw Error("iso-surface extraction produced an empty mesh");
    std::size_t removed = 0;
    const Mesh mesh = regularize_mesh(raw, config.extract.smooth_iterations, config.extract.smooth_lambda, &removed);
    r.mesh_vertices = mesh.vertices.size();
    r.mesh_faces = mesh.faces.size();
    write_obj(out(artifact::kMesh), mesh);
    const SurfaceCloud surface =
        poisson_sample(mesh, config.extract.spacing, PoissonOptions{config.run.seed, config.extract.max_rejections});
    r.cloud_points = surface.size();
    write_ply(out(artifact::kSurfaceCloud), surface_cloud_ply(surface));
    say(options, "refine: mesh " + std::to_string(r.mesh_vertices) + " vertices / " + std::to_string(r.mesh_faces) +
                     " faces (" + std::to_string(removed) + " degenerate removed), " +
                     std::to_string(r.cloud_points) + " surface points");

    // Projection views: the reference, then coarse renders around the ring. Their masks come
    // from the segmentation candidate when it scores above threshold, else from the field.
    const RenderOptions eo = eval_options(config, workers);
    const auto enhancer = make_enhancer(config.refine.enhancer, scene, config.render.background);
    const bool oracle_masks = config.refine.enhancer == "oracle";
    ViewImageSet views{{ref_cam, bundle.image, bundle.mask}};
    std::vector<CameraPose> novel_cams;
    std::vector<Image> novel_renders;
    const std::vector<CameraPose> ring = ring_cameras(ref_cam, config.texproj.views, 0.0);
    for (std::size_t k = 1; k < ring.size(); ++k) {
        const CameraPose& cam = ring[k];
        const RenderedView rv = render_view(field, cam, ShadingMode::Albedo, eo);
        MaskCandidate candidate;
        if (oracle_masks) candidate = {scene->render(cam, config.render.background).mask, 1.0};
        else candidate = {threshold(rv.mask), 0.0};
        views.push_back({cam, rv.rgb, select_mask(threshold(rv.mask), candidate, config.refine.mask_threshold)});
        novel_cams.push_back(cam);
        novel_renders.push_back(rv.rgb);
    }
    const std::vector<Image> pseudo = enhance_views(novel_renders, novel_cams, *enhancer, config.refine.strength);
    if (config.texproj.order == "azimuth") views = order_views(std::move(views));

    const double spacing = config.extract.spacing;
    TexturedPointCloud cloud = TexturedPointCloud::from_surface(surface, config.texproj.splat_radius_factor * spacing);
    const ProjectionReport proj =
        build_textured_cloud(cloud, views, config.texproj.depth_epsilon_factor * spacing);
    r.colored_points = cloud.colored_count();
    write_ply(out(artifact::kTexturedCloud), textured_cloud_ply(cloud));
    say(options, "refine: colored " + std::to_string(r.colored_points) + " of " + std::to_string(cloud.size()) +
                     " points from " + std::to_string(views.size()) + " views");

    // Deferred refinement against the pseudo images.
    const SplatSettings splat = splat_settings(config);
    const std::vector<CameraPose> held_out =
        ring_cameras(ref_cam, artifact::kTurntableFrames, kPi / artifact::kTurntableFrames);
    std::vector<Image> held_out_truth;
    for (const CameraPose& cam : held_out) held_out_truth.push_back(scene->render(cam, config.render.background).rgb);
    const auto evaluate = [&](const PointFeatures& f, const DeferredRenderer& rend, double& novel, double& ref) {
        std::vector<double> v;
        for (std::size_t i = 0; i < held_out.size(); ++i) {
            v.push_back(psnr(splat_render(cloud, f, rend, held_out[i], splat), held_out_truth[i]));
        }
        novel = mean(v);
        ref = psnr(splat_render(cloud, f, rend, ref_cam, splat), bundle.image);
    };

    const PointFeatures init_features = PointFeatures::from_cloud(cloud);
    const DeferredRenderer init_renderer = DeferredRenderer::initialized(config.run.seed);
    evaluate(init_features, init_renderer, r.novel_psnr_before, r.reference_psnr_before);

    RefineConfig rc;
    rc.steps = config.refine.steps;
    rc.lr_features = config.refine.lr_features;
    rc.lr_renderer = config.refine.lr_renderer;
    rc.splat = splat;
    const int every = std::max(1, rc.steps / 10);
    say(options, "refine: " + std::to_string(rc.steps) + " steps over " + std::to_string(novel_cams.size()) +
                     " pseudo views");
    const RefineResult refined =
        optimize_refine(cloud, init_features, init_renderer, novel_cams, pseudo, views[0], rc,
                        [&](const RefineStepLog& e) {
                            if (e.step % every != 0 && e.step + 1 != rc.steps) return;
                            char buf[128];
                            std::snprintf(buf, sizeof buf, "refine: step %d loss_ref %.5f loss_pseudo %.5f", e.step,
                                          e.loss_ref, e.loss_pseudo);
                            say(options, buf);
                        });

    // Everything below uses the f32 values as stored on disk.
    const PlyData refined_ply = refined_cloud_ply(cloud, refined.features);
    write_ply(out(artifact::kRefinedCloud), refined_ply);
    const CheckpointSection rend = renderer_section(refined.renderer);
    save_checkpoint(out(artifact::kRefinedCheckpoint), field, std::span(&rend, 1));
    const PointFeatures stored_features = features_from_ply(refined_ply);
    const DeferredRenderer stored_renderer = renderer_from_section(rend);
    evaluate(stored_features, stored_renderer, r.novel_psnr_after, r.reference_psnr_after);

    {
        std::ofstream f(out(artifact::kRefineLog));
        for (const RefineStepLog& e : refined.log) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%d\t%d\t%.6f\t%.6f\n", e.step, e.view, e.loss_ref, e.loss_pseudo);
            f << buf;
        }
        if (!f) throw IoError(r.artifacts.back().string(), "write failed");
    }
    const std::vector<CameraPose> turntable = ring_cameras(ref_cam, artifact::kTurntableFrames, 0.0);
    for (int i = 0; i < artifact::kTurntableFrames; ++i) {
        write_png(out(artifact::turntable_frame(i)),
                  splat_render(cloud, stored_features, stored_renderer, turntable[i], splat));
    }
    r.seconds = seconds_since(t0);

    nlohmann::json j;
    j["iso"] = r.iso;
    j["mesh_vertices"] = r.mesh_vertices;
    j["mesh_faces"] = r.mesh_faces;
    j["cloud_points"] = r.cloud_points;
    j["colored_points"] = r.colored_points;
    j["newly_colored_per_view"] = proj.newly_colored;
    j["steps"] = rc.steps;
    j["novel_psnr_before"] = r.novel_psnr_before;
    j["novel_psnr_after"] = r.novel_psnr_after;
    j["reference_psnr_before"] = r.reference_psnr_before;
    j["reference_psnr_after"] = r.reference_psnr_after;
    j["seconds"] = r.seconds;
    write_json(out(artifact::kRefineMetrics), j);

    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "refine: novel PSNR %.2f -> %.2f dB, reference PSNR %.2f -> %.2f dB, %.1f s", r.novel_psnr_before,
                  r.novel_psnr_after, r.reference_psnr_before, r.reference_psnr_after, r.seconds);
    say(options, buf);
    return r;
}

ExportReport run_export_cmd(const RunConfig& config, const RunOptions& options) {
    config.validate();
    const fs::path dir = prepare_work_dir(config);
    require_file(dir / artifact::kRefinedCloud);
    require_file(dir / artifact::kRefinedCheckpoint);
    const PlyData ply = read_ply((dir / artifact::kRefinedCloud).string());
    const Checkpoint ckpt = load_checkpoint((dir / artifact::kRefinedCheckpoint).string());
    const CheckpointSection* rend = nullptr;
    for (const CheckpointSection& s : ckpt.sections) {
        if (s.tag == std::array<char, 4>{'R', 'E', 'N', 'D'}) rend = &s;
    }
    if (!rend) throw IoError((dir / artifact::kRefinedCheckpoint).string(), "checkpoint has no renderer section");
    const DeferredRenderer renderer = renderer_from_section(*rend);
    const PointFeatures features = features_from_ply(ply);
    std::vector<Vec3> positions(ply.count);
    const int x = ply.column("x"), y = ply.column("y"), z = ply.column("z");
    for (std::size_t i = 0; i < ply.count; ++i) positions[i] = {ply.at(i, x), ply.at(i, y), ply.at(i, z)};

    ExportReport r;
    r.points = ply.count;
    const fs::path p = dir / artifact::kExport;
    write_ply(p.string(), colored_cloud_ply(positions, decode_point_colors(features, renderer)));
    r.artifacts.push_back(p);
    say(options, "export: " + std::to_string(r.points) + " colored points");
    return r;
}

} // namespace cit3d
