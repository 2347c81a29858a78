#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cit3d/error.hpp"

namespace cit3d {

/// Dense interleaved image of doubles (row-major, channels fastest).
///
/// Used for rgb (3 channels), masks, depth (1 channel), normals and image-space gradients.
class Image {
  public:
    Image() = default;
    Image(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const { return data_.empty(); }

    double& at(int x, int y, int c = 0) { return data_[offset(x, y) + c]; }
    double at(int x, int y, int c = 0) const { return data_[offset(x, y) + c]; }

    std::span<double> pixel(int x, int y) { return {data_.data() + offset(x, y), std::size_t(channels_)}; }
    std::span<const double> pixel(int x, int y) const {
        return {data_.data() + offset(x, y), std::size_t(channels_)};
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Image& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }
    bool same_size(const Image& o) const { return width_ == o.width_ && height_ == o.height_; }

    friend bool operator==(const Image&, const Image&) = default;

  private:
    std::size_t offset(int x, int y) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": image shapes differ (" +
                             std::to_string(a.width()) + "x" + std::to_string(a.height()) + "x" +
                             std::to_string(a.channels()) + " vs " + std::to_string(b.width()) +
                             "x" + std::to_string(b.height()) + "x" + std::to_string(b.channels()) +
                             ")");
    }
}

inline void require_same_size(const Image& a, const Image& b, const char* what) {
    if (!a.same_size(b)) {
        throw DimensionError(std::string(what) + ": image sizes differ");
    }
}

/// Bilinear lookup at continuous pixel coordinates (pixel centers at integer + 0.5), edge-clamped.
void sample_bilinear(const Image& img, double u, double v, std::span<double> out);

/// Peak signal-to-noise ratio for signals in [0,1] over all pixels and channels.
double psnr(const Image& a, const Image& b);

double mean_abs_difference(const Image& a, const Image& b);

} // namespace cit3d
