#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "orbit/image.hpp"
#include "orbit/rng.hpp"

namespace testutil {

inline orbit::ImageTensor random_image(int h, int w, std::uint64_t seed) {
    orbit::SplitMix64 rng(seed);
    orbit::ImageTensor img(h, w);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

// Quantized random image: survives an 8-bit save/load roundtrip exactly.
inline orbit::ImageTensor random_image_8bit(int h, int w, std::uint64_t seed) {
    orbit::SplitMix64 rng(seed);
    orbit::ImageTensor img(h, w);
    for (float& v : img.data) v = static_cast<float>(rng.next() % 256) / 255.0f;
    return img;
}

// Synthetic "scene": dark background, bright disc, gradient — enough
// structure for blurs and metrics to bite on.
inline orbit::ImageTensor scene_image(int h, int w, std::uint64_t seed) {
    orbit::SplitMix64 rng(seed);
    const double cx = rng.uniform(0.25, 0.75) * w;
    const double cy = rng.uniform(0.25, 0.75) * h;
    const double radius = rng.uniform(0.1, 0.3) * std::min(h, w);
    orbit::ImageTensor img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            const float base = static_cast<float>(0.05 + 0.1 * x / w);
            const float disc = d < radius ? static_cast<float>(0.9 - 0.4 * d / radius) : 0.0f;
            img.at(y, x, 0) = std::min(1.0f, base + disc);
            img.at(y, x, 1) = std::min(1.0f, base + disc * 0.8f);
            img.at(y, x, 2) = std::min(1.0f, base * 2.0f + disc * 0.6f);
        }
    return img;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        dir_ = std::filesystem::temp_directory_path() /
               ("orbit_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        std::filesystem::create_directories(dir_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }
    const std::filesystem::path& path() const { return dir_; }

private:
    static int& counter() {
        static int n = 0;
        return n;
    }
    std::filesystem::path dir_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace testutil
