#pragma once

#include <cstdint>
#include <vector>

#include "core/vec.hpp"

namespace morphsdf {

// Dense float image, row-major, values nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> pixels;  // height * width * channels

    Image() = default;
    Image(int w, int h, int c, float fill = 0.f)
        : width(w), height(h), channels(c), pixels(size_t(w) * h * c, fill) {}

    float& at(int x, int y, int c) { return pixels[(size_t(y) * width + x) * channels + c]; }
    float at(int x, int y, int c) const { return pixels[(size_t(y) * width + x) * channels + c]; }
    size_t count() const { return size_t(width) * height; }
};

// Bilinear sample at uv in [0,1]^2, texel centers at (i+0.5)/W. Clamped at
// the borders.
Vec3 sample_bilinear(const Image& img, float u, float v);

Image to_grayscale(const Image& img);

}  // namespace morphsdf
