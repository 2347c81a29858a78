#include <sstream>

#include "doctest.h"

#include "cit3d/config.hpp"
#include "cit3d/error.hpp"

using namespace cit3d;

namespace {

RunConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::string failing_key(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "<no error>";
}

} // namespace

TEST_CASE("defaults") {
    const RunConfig c = parse("");
    CHECK(c.coarse.steps == 2000);
    CHECK(c.refine.steps == 1000);
    CHECK(c.field.resolution == 64);
    CHECK(c.camera.width == 128);
    CHECK(c.guidance.timesteps == 1000);
    CHECK(c.guidance.t_min == 20);
    CHECK(c.guidance.t_max == 980);
    CHECK(c.guidance.prompt.identifier == "sks");
    CHECK(c.refine.mask_threshold == doctest::Approx(0.85));
    CHECK(c.run.seed == 0);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("parsing") {
    const RunConfig c = parse("# comment\n\n"
                              "coarse.steps = 12   # trailing comment\n"
                              "guidance.lambda_ss2d=0.5\n"
                              "scene.shape = box\n"
                              "scene.box_center = 0.1 0.2 -0.3\n"
                              "guidance.caption = a red box\n"
                              "run.seed = 18446744073709551615\n");
    CHECK(c.coarse.steps == 12);
    CHECK(c.guidance.lambda_ss2d == 0.5);
    CHECK(c.scene.shape == SceneShape::Box);
    CHECK(c.scene.box_center.z == doctest::Approx(-0.3));
    CHECK(c.guidance.prompt.caption == "a red box");
    CHECK(c.run.seed == 18446744073709551615ull);
}

TEST_CASE("errors name the key") {
    CHECK(failing_key("guidance.lambda_ss2d = -1\n") == "guidance.lambda_ss2d");
    CHECK(failing_key("coarse.steps = ten\n") == "coarse.steps");
    CHECK(failing_key("coarse.step = 10\n") == "coarse.step");
    CHECK(failing_key("coarse.steps = 10\ncoarse.steps = 11\n") == "coarse.steps");
    CHECK(failing_key("refine.enhancer = magic\n") == "refine.enhancer");
    CHECK(failing_key("guidance.t_max = 1000\n") == "guidance.t_max");
    CHECK(failing_key("guidance.t_min = 900\nguidance.t_max = 800\n") == "guidance.t_min");
    CHECK(failing_key("camera.radius = 0.8\n") == "camera.radius");
    CHECK(failing_key("scene.sphere_center = 1 2\n") == "scene.sphere_center");
    CHECK(failing_key("just words\n") == "line 1");
    CHECK(failing_key("guidance.identifier = two words\n") == "guidance.identifier");
}

TEST_CASE("write and parse round trip") {
    RunConfig c = parse("coarse.steps = 7\nguidance.beta_end = 0.0123456789\nscene.shape = union\n"
                        "texproj.order = input\nrun.work_dir = out/a\n");
    std::ostringstream first;
    write_config(first, c);
    std::istringstream in(first.str());
    const RunConfig back = parse_config(in);
    std::ostringstream second;
    write_config(second, back);
    CHECK(first.str() == second.str());
    CHECK(back.guidance.beta_end == c.guidance.beta_end);
    CHECK(back.scene.shape == SceneShape::Union);
}

TEST_CASE("section filter and work dir") {
    RunConfig c;
    std::istringstream ok("scene.sphere_radius = 0.4\n");
    apply_config_text(c, ok, "scene");
    CHECK(c.scene.sphere_radius == 0.4);
    std::istringstream bad("coarse.steps = 3\n");
    CHECK_THROWS_AS(apply_config_text(c, bad, "scene"), ConfigError);

    std::istringstream rel("run.work_dir = work\n");
    const RunConfig r = parse_config(rel, "/tmp/base");
    CHECK(r.work_dir() == std::filesystem::path("/tmp/base/work"));
    std::istringstream abs("run.work_dir = /data/w\n");
    CHECK(parse_config(abs, "/tmp/base").work_dir() == std::filesystem::path("/data/w"));
}
