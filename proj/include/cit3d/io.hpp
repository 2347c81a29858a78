#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cit3d/extract.hpp"
#include "cit3d/image.hpp"
#include "cit3d/refine.hpp"
#include "cit3d/texproj.hpp"

namespace cit3d {

// All readers and writers throw IoError carrying the offending path.

/// 8-bit PNG; 1-channel images become grayscale, 3-channel images RGB. Values are clamped
/// to [0, 1] and rounded to the nearest of 256 levels.
void write_png(const std::string& path, const Image& image);
/// Returns a 1- or 3-channel image in [0, 1]; alpha and 16-bit data are stripped.
Image read_png(const std::string& path);

/// Depth map: "CITD", u32 width, u32 height, 4 zero bytes, then width*height f32 values.
void write_depth(std::ostream& out, const Image& depth);
Image read_depth(std::istream& in);
void write_depth(const std::string& path, const Image& depth);
Image read_depth(const std::string& path);

/// ASCII OBJ with `v` and `f` records only; numbers use the shortest round-trip form.
void write_obj(std::ostream& out, const Mesh& mesh);
Mesh read_obj(std::istream& in);
void write_obj(const std::string& path, const Mesh& mesh);
Mesh read_obj(const std::string& path);

/// Binary little-endian PLY with one `vertex` element.
struct PlyData {
    struct Property {
        std::string name;
        std::string type; // float, uchar, int
    };
    std::vector<Property> properties;
    std::size_t count = 0;
    std::vector<double> values; // row-major, count * properties.size()

    int column(const std::string& name) const; // -1 when absent
    double at(std::size_t row, int col) const { return values[row * properties.size() + std::size_t(col)]; }
};

void write_ply(std::ostream& out, const PlyData& data);
PlyData read_ply(std::istream& in);
void write_ply(const std::string& path, const PlyData& data);
PlyData read_ply(const std::string& path);

/// x, y, z as float.
PlyData surface_cloud_ply(const SurfaceCloud& cloud);
/// x, y, z float; red, green, blue uchar; source_view int (-1 = uncolored).
PlyData textured_cloud_ply(const TexturedPointCloud& cloud);
/// Textured layout plus f0..f7 float feature channels.
PlyData refined_cloud_ply(const TexturedPointCloud& cloud, const PointFeatures& features);
/// x, y, z float; red, green, blue uchar.
PlyData colored_cloud_ply(const std::vector<Vec3>& positions, const std::vector<Vec3>& colors);

/// Rebuilds a textured cloud (positions, colors, sources) from the textured or refined layout.
TexturedPointCloud textured_cloud_from_ply(const PlyData& ply, double splat_radius);
/// Reads f0..f7 from the refined layout.
PointFeatures features_from_ply(const PlyData& ply);

std::uint8_t to_u8(double v);

} // namespace cit3d
