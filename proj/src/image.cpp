#include "cit3d/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cit3d {

void sample_bilinear(const Image& img, double u, double v, std::span<double> out) {
    const double fx = std::clamp(u - 0.5, 0.0, double(img.width() - 1));
    const double fy = std::clamp(v - 0.5, 0.0, double(img.height() - 1));
    const int x0 = std::min(static_cast<int>(fx), std::max(img.width() - 2, 0));
    const int y0 = std::min(static_cast<int>(fy), std::max(img.height() - 2, 0));
    const int x1 = std::min(x0 + 1, img.width() - 1);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double ax = fx - x0;
    const double ay = fy - y0;
    for (int c = 0; c < img.channels() && c < static_cast<int>(out.size()); ++c) {
        const double top = (1.0 - ax) * img.at(x0, y0, c) + ax * img.at(x1, y0, c);
        const double bottom = (1.0 - ax) * img.at(x0, y1, c) + ax * img.at(x1, y1, c);
        out[c] = (1.0 - ay) * top + ay * bottom;
    }
}

double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        se += d * d;
    }
    const double mse = se / std::max<std::size_t>(a.data().size(), 1);
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

double mean_abs_difference(const Image& a, const Image& b) {
    require_same_shape(a, b, "mean_abs_difference");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
    return s / std::max<std::size_t>(a.data().size(), 1);
}

} // namespace cit3d
