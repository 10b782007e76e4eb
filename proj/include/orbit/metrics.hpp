#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/image.hpp"

namespace orbit {

// Peak signal-to-noise ratio in dB with peak 1.0. Identical images return
// +infinity; report aggregation excludes that sentinel from averages.
inline double psnr(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_shape(b)) throw ShapeError("psnr: shape mismatch");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline std::vector<double> ssim_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size));
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        w[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

inline std::vector<double> luminance(const ImageTensor& img) {
    std::vector<double> y(img.pixel_count());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = 0.299 * img.data[i * 3] + 0.587 * img.data[i * 3 + 1] + 0.114 * img.data[i * 3 + 2];
    }
    return y;
}

}  // namespace detail

// Structural similarity (Wang et al.) on luminance (0.299/0.587/0.114),
// 11x11 Gaussian window with sigma 1.5, C1=(0.01)^2, C2=(0.03)^2, averaged
// over fully valid window positions.
inline double ssim(const ImageTensor& a, const ImageTensor& b) {
    constexpr int kWindow = 11;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    if (!a.same_shape(b)) throw ShapeError("ssim: shape mismatch");
    if (a.height < kWindow || a.width < kWindow) throw SizeError("ssim: image smaller than 11x11 window");

    const std::vector<double> win = detail::ssim_window(kWindow, 1.5);
    const std::vector<double> ya = detail::luminance(a);
    const std::vector<double> yb = detail::luminance(b);
    const int w = a.width;

    double total = 0.0;
    std::int64_t count = 0;
    for (int oy = 0; oy + kWindow <= a.height; ++oy) {
        for (int ox = 0; ox + kWindow <= a.width; ++ox) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int ky = 0; ky < kWindow; ++ky) {
                const double wy = win[static_cast<std::size_t>(ky)];
                const std::size_t row = static_cast<std::size_t>(oy + ky) * w + ox;
                for (int kx = 0; kx < kWindow; ++kx) {
                    const double wgt = wy * win[static_cast<std::size_t>(kx)];
                    const double va = ya[row + kx];
                    const double vb = yb[row + kx];
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            const double num = (2 * mu_a * mu_b + kC1) * (2 * cov + kC2);
            const double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace orbit
