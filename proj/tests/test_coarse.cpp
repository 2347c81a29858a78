#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "doctest.h"

#include "cit3d/coarse.hpp"
#include "cit3d/error.hpp"
#include "cit3d/scene.hpp"

using namespace cit3d;

namespace {

Image random_image(int w, int h, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Image img(w, h, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : img.data()) v = d(rng);
    return img;
}

ReferenceBundle bundle_with(const Image& image, const Image& mask) {
    ReferenceBundle b;
    b.camera.width = image.width();
    b.camera.height = image.height();
    b.image = image;
    b.mask = mask;
    b.depth = Image(image.width(), image.height(), 1, 2.0);
    return b;
}

struct SmallScene {
    std::shared_ptr<const SyntheticScene> scene = std::make_shared<const SyntheticScene>(SceneSpec{});
    CameraPose camera;
    ReferenceBundle bundle;
    TimestepSchedule timesteps = TimestepSchedule::linear_beta();
    ViewSchedule schedule;
    CoarseConfig config;

    explicit SmallScene(int steps, int res = 32) {
        camera.radius = 3.0;
        camera.elevation = deg_to_rad(15.0);
        camera.width = camera.height = res;
        const SyntheticScene::Views v = scene->render(camera);
        bundle = {v.rgb, v.mask, v.depth, v.normal, camera};
        schedule.total_steps = steps;
        schedule.reference = camera;
        config.steps = steps;
        config.prompt.class_name = "ball";
        config.prompt.caption = "a ball";
        config.render.samples = 32;
        config.optimizer.kind = OptimizerConfig::Kind::Adam;
        config.optimizer.lr_density = 0.05;
        config.optimizer.lr_albedo = 0.05;
        config.seed = 4;
    }

    VoxelField field() const { return VoxelField({20, 20, 20}, Aabb{{-0.6, -0.6, -0.6}, {0.6, 0.6, 0.6}}); }
};

} // namespace

TEST_CASE("reference_loss") {
    const int w = 8, h = 8;
    const Image x = random_image(w, h, 3, 1, 0.1, 0.7);
    Image mask(w, h, 1, 0.0);
    for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 4; ++xx) mask.at(xx, y) = 1.0; // 25% of the pixels
    const ReferenceBundle b = bundle_with(x, mask);

    SUBCASE("identical images") {
        RenderedView r;
        r.rgb = x;
        CHECK(reference_loss(r, b).value == 0.0);
    }
    SUBCASE("constant offset inside a quarter mask") {
        RenderedView r;
        r.rgb = x;
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 4; ++xx)
                for (int c = 0; c < 3; ++c) r.rgb.at(xx, y, c) += 0.2;
        const LossAndGradient l = reference_loss(r, b);
        CHECK(std::abs(l.value - 0.05) <= 1e-9);
        const double g = 1.0 / (w * h * 3);
        CHECK(l.gradient.at(1, 1, 0) == doctest::Approx(g));
        CHECK(l.gradient.at(6, 6, 0) == 0.0);
    }
    SUBCASE("empty mask annihilates everything") {
        RenderedView r;
        r.rgb = random_image(w, h, 3, 2);
        CHECK(reference_loss(r, bundle_with(x, Image(w, h, 1, 0.0))).value == 0.0);
    }
    SUBCASE("non-negative and zero only on agreement") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            RenderedView r;
            r.rgb = random_image(w, h, 3, 10 + s);
            CHECK(reference_loss(r, b).value > 0.0);
        }
    }
    SUBCASE("dimension mismatch") {
        RenderedView r;
        r.rgb = Image(4, 4, 3);
        CHECK_THROWS_AS(reference_loss(r, b), DimensionError);
    }
}

TEST_CASE("depth_pearson_loss") {
    const Image d_ref = random_image(10, 10, 1, 3, 1.0, 3.0);
    Image mask = random_image(10, 10, 1, 4);
    for (double& m : mask.data()) m = m > 0.3 ? 1.0 : 0.0;

    CHECK(depth_pearson_loss(d_ref, d_ref, mask) == doctest::Approx(-1.0).epsilon(1e-12));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ua(1e-3, 100.0), ub(-50.0, 50.0);
    for (int k = 0; k < 200; ++k) {
        const double a = ua(rng), bb = ub(rng);
        Image d = d_ref;
        for (double& v : d.data()) v = a * v + bb;
        CHECK(std::abs(depth_pearson_loss(d_ref, d, mask) + 1.0) <= 1e-6);
    }
    Image d3 = d_ref;
    for (double& v : d3.data()) v = 3.0 * v + 7.0;
    CHECK(depth_pearson_loss(d_ref, d3, mask) == doctest::Approx(-1.0));
    Image neg = d_ref;
    for (double& v : neg.data()) v = -v;
    CHECK(depth_pearson_loss(d_ref, neg, mask) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(depth_pearson_loss(d_ref, Image(10, 10, 1, 5.0), mask), DegenerateVarianceError);
    Image one(10, 10, 1, 0.0);
    one.at(2, 2) = 1.0;
    CHECK_THROWS_AS(depth_pearson_loss(d_ref, d_ref, one), DegenerateVarianceError);

    SUBCASE("gradient matches finite differences") {
        const Image d = random_image(10, 10, 1, 6, 1.0, 3.0);
        const LossAndGradient g = depth_pearson_loss_with_grad(d_ref, d, mask);
        CHECK(g.value == doctest::Approx(depth_pearson_loss(d_ref, d, mask)));
        for (std::size_t i = 0; i < d.data().size(); ++i) {
            Image p = d, m = d;
            p.data()[i] += 1e-6;
            m.data()[i] -= 1e-6;
            const double num = (depth_pearson_loss(d_ref, p, mask) - depth_pearson_loss(d_ref, m, mask)) / 2e-6;
            CHECK(g.gradient.data()[i] == doctest::Approx(num).epsilon(1e-5).scale(1e-3));
        }
    }
}

TEST_CASE("progressive view schedule") {
    ViewSchedule s;
    s.total_steps = 1000;
    s.range_start = deg_to_rad(30.0);
    s.reference.azimuth = deg_to_rad(40.0);
    s.reference.radius = 2.7;
    std::mt19937_64 rng(1);

    SUBCASE("first step stays within +-15 degrees") {
        for (int i = 0; i < 10000; ++i) {
            const CameraPose c = sample_camera(s, 0, rng);
            double off = c.azimuth - s.reference.azimuth;
            off = std::remainder(off, 2.0 * kPi);
            CHECK(std::abs(off) <= deg_to_rad(15.0) + 1e-12);
            CHECK(c.radius == s.reference.radius);
            CHECK(c.elevation >= s.elevation_min);
            CHECK(c.elevation <= s.elevation_max);
        }
    }
    SUBCASE("last step covers the full circle") {
        std::vector<double> az;
        for (int i = 0; i < 10000; ++i) az.push_back(sample_camera(s, s.total_steps - 1, rng).azimuth);
        std::sort(az.begin(), az.end());
        CHECK(az.front() <= deg_to_rad(2.0));
        CHECK(az.back() >= 2.0 * kPi - deg_to_rad(2.0));
        double gap = 0.0;
        for (std::size_t i = 1; i < az.size(); ++i) gap = std::max(gap, az[i] - az[i - 1]);
        CHECK(gap < deg_to_rad(2.0));
        CHECK(s.azimuth_range(s.total_steps - 1) == doctest::Approx(2.0 * kPi));
    }
    SUBCASE("allowed range never shrinks") {
        for (int i = 0; i + 1 < s.total_steps; ++i) CHECK(s.azimuth_range(i) <= s.azimuth_range(i + 1));
        CHECK_THROWS(sample_camera(s, s.total_steps, rng));
    }
}

TEST_CASE("run_coarse") {
    SUBCASE("zero learning rate leaves the field bit-identical") {
        SmallScene sc(5, 16);
        sc.config.optimizer.lr_density = 0.0;
        sc.config.optimizer.lr_albedo = 0.0;
        const AnalyticOracleProvider p(sc.scene, sc.timesteps);
        const VoxelField f0 = sc.field();
        const CoarseResult r = run_coarse(f0, sc.bundle, sc.schedule, p, p, sc.timesteps, sc.config);
        CHECK(r.field == f0);
        CHECK(r.log.size() == 5);
    }
    SUBCASE("sgd also leaves the field alone at zero rate") {
        SmallScene sc(3, 16);
        sc.config.optimizer = OptimizerConfig{};
        sc.config.optimizer.lr_density = sc.config.optimizer.lr_albedo = 0.0;
        sc.config.optimizer.momentum = 0.9;
        const NullProvider p;
        CHECK(run_coarse(sc.field(), sc.bundle, sc.schedule, p, p, sc.timesteps, sc.config).field == sc.field());
    }
    SUBCASE("fixed seed is bit-reproducible") {
        SmallScene sc(6, 16);
        const AnalyticOracleProvider p(sc.scene, sc.timesteps);
        const CoarseResult a = run_coarse(sc.field(), sc.bundle, sc.schedule, p, p, sc.timesteps, sc.config);
        const CoarseResult b = run_coarse(sc.field(), sc.bundle, sc.schedule, p, p, sc.timesteps, sc.config);
        CHECK(a.field == b.field);
        sc.config.seed = 5;
        CHECK_FALSE(run_coarse(sc.field(), sc.bundle, sc.schedule, p, p, sc.timesteps, sc.config).field == a.field);
    }
    SUBCASE("tiny masks are fatal, flat reference depth only skips the depth term") {
        SmallScene sc(2, 16);
        const NullProvider p;
        ReferenceBundle b = sc.bundle;
        std::fill(b.mask.data().begin(), b.mask.data().end(), 0.0);
        b.mask.at(8, 8) = 1.0;
        CHECK_THROWS_AS(run_coarse(sc.field(), b, sc.schedule, p, p, sc.timesteps, sc.config), DegenerateVarianceError);
        b = sc.bundle;
        for (double& d : b.depth.data()) d = 2.5;
        const CoarseResult r = run_coarse(sc.field(), b, sc.schedule, p, p, sc.timesteps, sc.config);
        CHECK(r.warnings.size() == 2);
        CHECK(r.log[0].loss_depth == 0.0);
    }
    SUBCASE("the reference term matters for the reference view") {
        SmallScene sc(250, 32);
        const AnalyticOracleProvider p(sc.scene, sc.timesteps);
        RenderOptions eval;
        eval.samples = 64;
        eval.stratified = false;
        const auto ref_psnr = [&](const CoarseConfig& cfg) {
            const CoarseResult r = run_coarse(sc.field(), sc.bundle, sc.schedule, p, p, sc.timesteps, cfg);
            return psnr(render_view(r.field, sc.camera, ShadingMode::Albedo, eval).rgb, sc.bundle.image);
        };
        for (std::uint64_t seed : {1, 2, 3}) {
            CoarseConfig full = sc.config;
            full.seed = seed;
            CoarseConfig ablated = full;
            ablated.weight_reference = 0.0;
            const double with_ref = ref_psnr(full);
            const double without = ref_psnr(ablated);
            MESSAGE("seed " << seed << ": reference PSNR " << with_ref << " dB with the reference term, " << without
                            << " dB without");
            CHECK(with_ref > without);
        }
    }
    SUBCASE("training log format") {
        std::vector<CoarseStepLog> log(2);
        log[1].step = 1;
        log[1].loss_ref = 0.5;
        log[1].mode = ShadingMode::Normal;
        log[1].azimuth_deg = 12.5;
        std::ostringstream out;
        write_training_log(out, log);
        std::istringstream in(out.str());
        std::string line;
        int lines = 0;
        while (std::getline(in, line)) {
            ++lines;
            CHECK(std::count(line.begin(), line.end(), '\t') == 5);
        }
        CHECK(lines == 2);
        CHECK(out.str().find("\tnormal\n") != std::string::npos);
    }
}

TEST_CASE("optimizers") {
    VoxelField f({2, 2, 2}, Aabb{{0, 0, 0}, {1, 1, 1}}, 0.0, 0.0);
    FieldGradient g(f.voxel_count());
    std::fill(g.density.begin(), g.density.end(), 2.0);
    std::fill(g.albedo.begin(), g.albedo.end(), -1.0);

    SUBCASE("plain sgd") {
        OptimizerConfig c;
        c.lr_density = 0.1;
        c.lr_albedo = 0.5;
        FieldOptimizer opt(c, f.voxel_count());
        opt.step(f, g);
        CHECK(f.raw_density()[0] == doctest::Approx(-0.2));
        CHECK(f.raw_albedo()[0] == doctest::Approx(0.5));
    }
    SUBCASE("adam's first step moves every parameter by the learning rate") {
        OptimizerConfig c;
        c.kind = OptimizerConfig::Kind::Adam;
        c.lr_density = c.lr_albedo = 0.05;
        FieldOptimizer opt(c, f.voxel_count());
        opt.step(f, g);
        CHECK(f.raw_density()[3] == doctest::Approx(-0.05).epsilon(1e-6));
        CHECK(f.raw_albedo()[5] == doctest::Approx(0.05).epsilon(1e-6));
    }
    CHECK(parse_optimizer_kind("adam") == OptimizerConfig::Kind::Adam);
    CHECK_THROWS(parse_optimizer_kind("lbfgs"));
}
