#include "cit3d/io.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cit3d/binary_io.hpp"
#include "cit3d/error.hpp"

namespace cit3d {

std::uint8_t to_u8(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError(path, "cannot open for writing");
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(path, "cannot open for reading");
    return f;
}

void finish_write(std::ofstream& f, const std::string& path) {
    f.flush();
    if (!f) throw IoError(path, "write failed");
}

// Runs a stream codec and rethrows its failures as IoError carrying the path.
template <class Fn>
auto with_path(const std::string& path, Fn&& fn) {
    try {
        return fn();
    } catch (const IoError&) {
        throw;
    } catch (const std::exception& e) {
        throw IoError(path, e.what());
    }
}

} // namespace

// ---------------------------------------------------------------------------------------------
// PNG

void write_png(const std::string& path, const Image& image) {
    if (image.channels() != 1 && image.channels() != 3) throw IoError(path, "png needs 1 or 3 channels");
    if (image.empty()) throw IoError(path, "cannot write an empty image");
    std::vector<std::uint8_t> bytes(image.data().size());
    std::transform(image.data().begin(), image.data().end(), bytes.begin(), to_u8);
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError(path, "png write failed: " + msg);
    }
}

Image read_png(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError(path, "png read failed: " + msg);
    }
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const int channels = color ? 3 : 1;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError(path, "png decode failed: " + msg);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), channels);
    for (std::size_t i = 0; i < bytes.size(); ++i) out.data()[i] = bytes[i] / 255.0;
    return out;
}

// ---------------------------------------------------------------------------------------------
// Depth

void write_depth(std::ostream& out, const Image& depth) {
    if (depth.channels() != 1) throw DimensionError("depth maps have one channel");
    out.write("CITD", 4);
    binio::write_u32(out, static_cast<std::uint32_t>(depth.width()));
    binio::write_u32(out, static_cast<std::uint32_t>(depth.height()));
    binio::write_u32(out, 0);
    for (double v : depth.data()) binio::write_f32(out, static_cast<float>(v));
}

Image read_depth(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CITD", 4) != 0) throw Error("not a CITD depth file");
    const std::uint32_t w = binio::read_u32(in, "depth width");
    const std::uint32_t h = binio::read_u32(in, "depth height");
    binio::read_u32(in, "depth header padding");
    if (w == 0 || h == 0 || std::uint64_t(w) * h > (1ull << 28)) throw Error("implausible depth dimensions");
    Image d(static_cast<int>(w), static_cast<int>(h), 1);
    for (double& v : d.data()) v = binio::read_f32(in, "depth values");
    return d;
}

void write_depth(const std::string& path, const Image& depth) {
    auto f = open_out(path);
    with_path(path, [&] { write_depth(f, depth); });
    finish_write(f, path);
}

Image read_depth(const std::string& path) {
    auto f = open_in(path);
    return with_path(path, [&] { return read_depth(f); });
}

// ---------------------------------------------------------------------------------------------
// OBJ

namespace {

void put_number(std::ostream& out, double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, r.ptr - buf);
}

std::string_view next_token(std::string_view& s) {
    const std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        s = {};
        return {};
    }
    s.remove_prefix(b);
    const std::size_t e = std::min(s.find_first_of(" \t\r"), s.size());
    const std::string_view tok = s.substr(0, e);
    s.remove_prefix(e);
    return tok;
}

template <class T>
T parse_number(std::string_view tok, const char* what) {
    T v{};
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
        throw Error(std::string("malformed ") + what + ": '" + std::string(tok) + "'");
    }
    return v;
}

} // namespace

void write_obj(std::ostream& out, const Mesh& mesh) {
    mesh.validate();
    for (const Vec3& v : mesh.vertices) {
        out << "v ";
        put_number(out, v.x);
        out << ' ';
        put_number(out, v.y);
        out << ' ';
        put_number(out, v.z);
        out << '\n';
    }
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

Mesh read_obj(std::istream& in) {
    Mesh m;
    std::string line;
    while (std::getline(in, line)) {
        std::string_view s = line;
        const std::string_view kind = next_token(s);
        if (kind == "v") {
            Vec3 p;
            for (int a = 0; a < 3; ++a) p[a] = parse_number<double>(next_token(s), "obj vertex");
            m.vertices.push_back(p);
        } else if (kind == "f") {
            std::vector<int> idx;
            for (std::string_view tok = next_token(s); !tok.empty(); tok = next_token(s)) {
                const int i = parse_number<int>(tok.substr(0, tok.find('/')), "obj face index");
                idx.push_back(i < 0 ? static_cast<int>(m.vertices.size()) + i : i - 1);
            }
            if (idx.size() < 3) throw Error("obj face with fewer than three vertices");
            for (std::size_t j = 1; j + 1 < idx.size(); ++j) m.faces.push_back({idx[0], idx[j], idx[j + 1]});
        }
    }
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw Error(std::string("obj: ") + e.what());
    }
    return m;
}

void write_obj(const std::string& path, const Mesh& mesh) {
    auto f = open_out(path);
    with_path(path, [&] { write_obj(f, mesh); });
    finish_write(f, path);
}

Mesh read_obj(const std::string& path) {
    auto f = open_in(path);
    return with_path(path, [&] { return read_obj(f); });
}

// ---------------------------------------------------------------------------------------------
// PLY

int PlyData::column(const std::string& name) const {
    for (std::size_t i = 0; i < properties.size(); ++i) {
        if (properties[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

namespace {

std::string canonical_type(const std::string& t) {
    if (t == "float" || t == "float32") return "float";
    if (t == "uchar" || t == "uint8") return "uchar";
    if (t == "int" || t == "int32") return "int";
    throw Error("unsupported ply property type '" + t + "'");
}

} // namespace

void write_ply(std::ostream& out, const PlyData& data) {
    if (data.values.size() != data.count * data.properties.size()) throw Error("ply table size mismatch");
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << data.count << '\n';
    for (const auto& p : data.properties) out << "property " << canonical_type(p.type) << ' ' << p.name << '\n';
    out << "end_header\n";
    const std::size_t cols = data.properties.size();
    for (std::size_t r = 0; r < data.count; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = data.values[r * cols + c];
            const std::string& t = data.properties[c].type;
            if (t == "float") {
                binio::write_f32(out, static_cast<float>(v));
            } else if (t == "uchar") {
                binio::write_u8(out, static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)));
            } else {
                binio::write_i32(out, static_cast<std::int32_t>(v));
            }
        }
    }
}

PlyData read_ply(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw Error("missing ply magic");
    PlyData d;
    bool format_ok = false;
    bool in_vertex = false;
    bool seen_vertex = false;
    while (true) {
        if (!std::getline(in, line)) throw Error("ply header not terminated");
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "end_header") break;
        if (word == "comment" || word == "obj_info" || word.empty()) continue;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") throw Error("only binary_little_endian ply is supported");
            format_ok = true;
        } else if (word == "element") {
            std::string name;
            std::size_t n = 0;
            ls >> name >> n;
            if (name != "vertex" || seen_vertex) throw Error("ply must contain exactly one vertex element");
            if (n > (std::size_t(1) << 28)) throw Error("implausible ply vertex count");
            d.count = n;
            in_vertex = seen_vertex = true;
        } else if (word == "property") {
            std::string type;
            std::string name;
            ls >> type >> name;
            if (!in_vertex) throw Error("ply property outside the vertex element");
            if (type == "list") throw Error("ply list properties are not supported");
            d.properties.push_back({name, canonical_type(type)});
        } else {
            throw Error("unexpected ply header line '" + line + "'");
        }
    }
    if (!format_ok || !seen_vertex) throw Error("incomplete ply header");
    const std::size_t cols = d.properties.size();
    d.values.resize(d.count * cols);
    for (std::size_t r = 0; r < d.count; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::string& t = d.properties[c].type;
            double& v = d.values[r * cols + c];
            if (t == "float") {
                v = binio::read_f32(in, "ply float");
            } else if (t == "uchar") {
                v = binio::read_u8(in, "ply uchar");
            } else {
                v = binio::read_i32(in, "ply int");
            }
        }
    }
    return d;
}

void write_ply(const std::string& path, const PlyData& data) {
    auto f = open_out(path);
    with_path(path, [&] { write_ply(f, data); });
    finish_write(f, path);
}

PlyData read_ply(const std::string& path) {
    auto f = open_in(path);
    return with_path(path, [&] { return read_ply(f); });
}

namespace {

void add_xyz(PlyData& d) {
    for (const char* n : {"x", "y", "z"}) d.properties.push_back({n, "float"});
}

void add_rgb(PlyData& d) {
    for (const char* n : {"red", "green", "blue"}) d.properties.push_back({n, "uchar"});
}

// Float-rounded position, so rows written from doubles survive a read/write cycle unchanged.
void push_xyz(std::vector<double>& row, const Vec3& p) {
    for (int a = 0; a < 3; ++a) row.push_back(static_cast<float>(p[a]));
}

void push_rgb(std::vector<double>& row, const Vec3& c) {
    for (int a = 0; a < 3; ++a) row.push_back(to_u8(c[a]));
}

} // namespace

PlyData surface_cloud_ply(const SurfaceCloud& cloud) {
    PlyData d;
    add_xyz(d);
    d.count = cloud.size();
    d.values.reserve(3 * d.count);
    for (const SurfacePoint& p : cloud.points) push_xyz(d.values, p.position);
    return d;
}

PlyData textured_cloud_ply(const TexturedPointCloud& cloud) {
    PlyData d;
    add_xyz(d);
    add_rgb(d);
    d.properties.push_back({"source_view", "int"});
    d.count = cloud.size();
    d.values.reserve(7 * d.count);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        push_xyz(d.values, cloud.positions()[i]);
        push_rgb(d.values, cloud.colors()[i]);
        d.values.push_back(cloud.source_views()[i]);
    }
    return d;
}

PlyData refined_cloud_ply(const TexturedPointCloud& cloud, const PointFeatures& features) {
    if (features.points() != cloud.size()) throw DimensionError("feature count does not match the cloud");
    PlyData d;
    add_xyz(d);
    add_rgb(d);
    d.properties.push_back({"source_view", "int"});
    for (int k = 0; k < kFeatureChannels; ++k) d.properties.push_back({"f" + std::to_string(k), "float"});
    d.count = cloud.size();
    d.values.reserve((7 + kFeatureChannels) * d.count);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        push_xyz(d.values, cloud.positions()[i]);
        const double* f = features.at(i);
        push_rgb(d.values, {f[0], f[1], f[2]});
        d.values.push_back(cloud.source_views()[i]);
        for (int k = 0; k < kFeatureChannels; ++k) d.values.push_back(static_cast<float>(f[k]));
    }
    return d;
}

PlyData colored_cloud_ply(const std::vector<Vec3>& positions, const std::vector<Vec3>& colors) {
    if (positions.size() != colors.size()) throw DimensionError("position/color count mismatch");
    PlyData d;
    add_xyz(d);
    add_rgb(d);
    d.count = positions.size();
    d.values.reserve(6 * d.count);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        push_xyz(d.values, positions[i]);
        push_rgb(d.values, colors[i]);
    }
    return d;
}

TexturedPointCloud textured_cloud_from_ply(const PlyData& ply, double splat_radius) {
    const int x = ply.column("x"), y = ply.column("y"), z = ply.column("z");
    const int r = ply.column("red"), g = ply.column("green"), b = ply.column("blue");
    const int s = ply.column("source_view");
    if (x < 0 || y < 0 || z < 0 || r < 0 || g < 0 || b < 0 || s < 0) throw Error("ply lacks textured-cloud columns");
    std::vector<Vec3> pos(ply.count);
    for (std::size_t i = 0; i < ply.count; ++i) pos[i] = {ply.at(i, x), ply.at(i, y), ply.at(i, z)};
    TexturedPointCloud cloud(std::move(pos), splat_radius);
    for (std::size_t i = 0; i < ply.count; ++i) {
        const int view = static_cast<int>(ply.at(i, s));
        if (view == kNoView) continue;
        cloud.assign(i, Vec3{ply.at(i, r), ply.at(i, g), ply.at(i, b)} / 255.0, view);
    }
    return cloud;
}

PointFeatures features_from_ply(const PlyData& ply) {
    PointFeatures f;
    f.values.resize(ply.count * kFeatureChannels);
    for (int k = 0; k < kFeatureChannels; ++k) {
        const int c = ply.column("f" + std::to_string(k));
        if (c < 0) throw Error("ply lacks feature column f" + std::to_string(k));
        for (std::size_t i = 0; i < ply.count; ++i) f.at(i)[k] = ply.at(i, c);
    }
    return f;
}

} // namespace cit3d
