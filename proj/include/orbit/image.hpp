#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/tensor.hpp"

namespace orbit {

// H x W x 3 image, float values in [0,1], channel-last, sRGB semantics.
// The universal currency of the pipeline.
struct ImageTensor {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // size height*width*3, HWC

    ImageTensor() = default;
    ImageTensor(int h, int w, float value = 0.0f)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, value) {
        if (h < 1 || w < 1) throw SizeError("image dimensions must be >= 1");
    }

    static constexpr int channels = 3;

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

    bool same_shape(const ImageTensor& other) const {
        return height == other.height && width == other.width;
    }

    void clamp01() {
        for (float& v : data) v = std::min(1.0f, std::max(0.0f, v));
    }
};

inline std::uint8_t float_to_byte(float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline float byte_to_float(std::uint8_t b) {
    return static_cast<float>(b) / 255.0f;
}

// Interleaved 8-bit RGB rows -> image. channels may be 1 (replicated) or 3/4
// (alpha dropped).
inline ImageTensor image_from_bytes(const std::uint8_t* bytes, int h, int w, int channels) {
    if (h < 1 || w < 1) throw SizeError("image dimensions must be >= 1");
    ImageTensor img(h, w);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* px = bytes + i * channels;
        if (channels == 1) {
            const float v = byte_to_float(px[0]);
            img.data[i * 3 + 0] = v;
            img.data[i * 3 + 1] = v;
            img.data[i * 3 + 2] = v;
        } else {
            img.data[i * 3 + 0] = byte_to_float(px[0]);
            img.data[i * 3 + 1] = byte_to_float(px[1]);
            img.data[i * 3 + 2] = byte_to_float(px[2]);
        }
    }
    return img;
}

inline std::vector<std::uint8_t> image_to_bytes(const ImageTensor& img) {
    std::vector<std::uint8_t> out(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) out[i] = float_to_byte(img.data[i]);
    return out;
}

// Bilinear resize with half-pixel centers (align_corners=false), clamped
// sampling at the borders, result clamped to [0,1].
inline ImageTensor resize_bilinear(const ImageTensor& src, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw SizeError("resize target must be >= 1x1");
    if (out_h == src.height && out_w == src.width) return src;
    ImageTensor dst(out_h, out_w);
    const float sy = static_cast<float>(src.height) / out_h;
    const float sx = static_cast<float>(src.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        float fy = (y + 0.5f) * sy - 0.5f;
        fy = std::min(std::max(fy, 0.0f), static_cast<float>(src.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const float wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            float fx = (x + 0.5f) * sx - 0.5f;
            fx = std::min(std::max(fx, 0.0f), static_cast<float>(src.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const float wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const float top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
                const float bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
                float v = top * (1 - wy) + bot * wy;
                dst.at(y, x, c) = std::min(1.0f, std::max(0.0f, v));
            }
        }
    }
    return dst;
}

// Aspect-preserving resize onto a cell of the given size; the uncovered
// border keeps the background value (0, black, matching space imagery).
inline ImageTensor letterbox(const ImageTensor& src, int cell_h, int cell_w, float background = 0.0f) {
    if (cell_h < 1 || cell_w < 1) throw SizeError("letterbox cell must be >= 1x1");
    const double scale = std::min(static_cast<double>(cell_h) / src.height,
                                  static_cast<double>(cell_w) / src.width);
    const int rh = std::max(1, static_cast<int>(std::lround(src.height * scale)));
    const int rw = std::max(1, static_cast<int>(std::lround(src.width * scale)));
    const ImageTensor resized = resize_bilinear(src, rh, rw);
    ImageTensor out(cell_h, cell_w, background);
    const int oy = (cell_h - rh) / 2;
    const int ox = (cell_w - rw) / 2;
    for (int y = 0; y < rh; ++y)
        for (int x = 0; x < rw; ++x)
            for (int c = 0; c < 3; ++c) out.at(oy + y, ox + x, c) = resized.at(y, x, c);
    return out;
}

// Edge-inclusive reflection: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2.
// Used for all image-space convolutions so borders keep local statistics.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

// HWC [0,1] image -> 1xCxHxW tensor.
template <typename T>
Tensor<T> image_to_nchw(const ImageTensor& img) {
    Tensor<T> t({1, 3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at4(0, c, y, x) = static_cast<T>(img.at(y, x, c));
    return t;
}

// n-th item of an NxCxHxW tensor -> HWC image, clamped to [0,1].
template <typename T>
ImageTensor nchw_to_image(const Tensor<T>& t, std::int64_t n = 0) {
    if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("expected Nx3xHxW tensor");
    const int h = static_cast<int>(t.dim(2));
    const int w = static_cast<int>(t.dim(3));
    ImageTensor img(h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float v = static_cast<float>(t.at4(n, c, y, x));
                img.at(y, x, c) = std::min(1.0f, std::max(0.0f, v));
            }
    return img;
}

}  // namespace orbit
