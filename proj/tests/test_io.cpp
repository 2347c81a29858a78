#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"

#include "cit3d/error.hpp"
#include "cit3d/io.hpp"

using namespace cit3d;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "cit3d_test_io";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Image random_image(int w, int h, int c, std::uint64_t seed) {
    Image img(w, h, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : img.data()) v = u(rng);
    return img;
}

} // namespace

TEST_CASE("to_u8") {
    CHECK(to_u8(0.0) == 0);
    CHECK(to_u8(1.0) == 255);
    CHECK(to_u8(-3.0) == 0);
    CHECK(to_u8(7.0) == 255);
    CHECK(to_u8(0.5) == 128);
    CHECK(to_u8(100.0 / 255.0) == 100);
}

TEST_CASE("png") {
    for (int channels : {1, 3}) {
        CAPTURE(channels);
        const Image img = random_image(13, 7, channels, 4);
        const fs::path p = scratch("img" + std::to_string(channels) + ".png");
        write_png(p.string(), img);
        const Image back = read_png(p.string());
        REQUIRE(back.width() == 13);
        REQUIRE(back.height() == 7);
        REQUIRE(back.channels() == channels);
        for (std::size_t i = 0; i < img.data().size(); ++i) {
            CHECK(back.data()[i] == doctest::Approx(to_u8(img.data()[i]) / 255.0).epsilon(1e-12));
        }
        // Quantized data survives a second trip unchanged, and so do the bytes.
        const fs::path q = scratch("img" + std::to_string(channels) + "_again.png");
        write_png(q.string(), back);
        CHECK(read_png(q.string()) == back);
        CHECK(slurp(p) == slurp(q));
    }
    CHECK_THROWS_AS(write_png(scratch("bad.png").string(), Image(4, 4, 2)), Error);
}

TEST_CASE("depth maps round trip exactly in f32") {
    Image d = random_image(9, 5, 1, 8);
    for (double& v : d.data()) v = static_cast<float>(v * 3.0);
    std::stringstream s;
    write_depth(s, d);
    CHECK(s.str().size() == 16 + 4 * 45);
    CHECK(s.str().substr(0, 4) == "CITD");
    CHECK(read_depth(s) == d);

    std::istringstream junk("NOPE0000000000000000");
    CHECK_THROWS_AS(read_depth(junk), Error);
}

TEST_CASE("obj") {
    Mesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0.1, 0.2, 1.0 / 3.0}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    std::stringstream s;
    write_obj(s, m);
    const Mesh back = read_obj(s);
    CHECK(back.vertices.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back.vertices[i].x == m.vertices[i].x);
        CHECK(back.vertices[i].y == m.vertices[i].y);
        CHECK(back.vertices[i].z == m.vertices[i].z);
    }
    CHECK(back.faces == m.faces);

    std::istringstream other("# quad with texture and normal refs\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
                             "vn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4//1\nf -4 -3 -2\n");
    const Mesh q = read_obj(other);
    REQUIRE(q.faces.size() == 3);
    CHECK(q.faces[0] == std::array<int, 3>{0, 1, 2});
    CHECK(q.faces[1] == std::array<int, 3>{0, 2, 3});
    CHECK(q.faces[2] == std::array<int, 3>{0, 1, 2});

    std::istringstream bad("v 0 0 0\nf 1 2 3\n");
    CHECK_THROWS_AS(read_obj(bad), Error);
}

TEST_CASE("ply") {
    PlyData d;
    d.properties = {{"x", "float"}, {"red", "uchar"}, {"source_view", "int"}};
    d.count = 3;
    d.values = {0.25, 0, -1, -1.5, 255, 0, 1e-3f, 17, 7};
    std::stringstream s;
    write_ply(s, d);
    const std::string bytes = s.str();
    CHECK(bytes.rfind("ply\nformat binary_little_endian 1.0\n", 0) == 0);
    const PlyData back = read_ply(s);
    CHECK(back.count == 3);
    REQUIRE(back.properties.size() == 3);
    CHECK(back.properties[1].type == "uchar");
    CHECK(back.values == d.values);
    CHECK(back.column("red") == 1);
    CHECK(back.column("green") == -1);

    std::stringstream again;
    write_ply(again, back);
    CHECK(again.str() == bytes);

    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_ply(truncated), Error);
}

TEST_CASE("cloud layouts") {
    TexturedPointCloud cloud({{0, 0, 0}, {0.5, 0.25, -0.125}, {1, 1, 1}}, 0.02);
    cloud.assign(0, {1.0, 0.0, 0.5}, 0);
    cloud.assign(2, {0.2, 0.4, 0.6}, 3);
    const PlyData p = textured_cloud_ply(cloud);
    CHECK(p.column("source_view") >= 0);
    const TexturedPointCloud back = textured_cloud_from_ply(p, 0.02);
    CHECK(back.positions() == cloud.positions());
    CHECK(back.source_views() == cloud.source_views());
    CHECK(back.colored_count() == 2);
    CHECK(back.colors()[2].y == doctest::Approx(to_u8(0.4) / 255.0));

    PointFeatures f = PointFeatures::from_cloud(cloud);
    for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = static_cast<float>(0.01 * double(i) - 0.1);
    const PlyData r = refined_cloud_ply(cloud, f);
    CHECK(features_from_ply(r).values == f.values);
    CHECK(textured_cloud_from_ply(r, 0.02).source_views() == cloud.source_views());
}

TEST_CASE("file errors carry the path") {
    const std::string missing = (fs::temp_directory_path() / "cit3d_no_such_dir" / "x.png").string();
    for (const auto& fn : std::vector<std::function<void()>>{
             [&] { read_png(missing); }, [&] { read_depth(missing); }, [&] { read_obj(missing); },
             [&] { read_ply(missing); }, [&] { write_png(missing, Image(2, 2, 3)); }}) {
        try {
            fn();
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.path() == missing);
        }
    }
    const fs::path garbage = scratch("garbage.png");
    std::ofstream(garbage) << "not a png";
    CHECK_THROWS_AS(read_png(garbage.string()), IoError);
}
