#include "core/image.hpp"

#include <algorithm>
#include <cmath>

namespace morphsdf {

Vec3 sample_bilinear(const Image& img, float u, float v) {
    float fx = u * img.width - 0.5f;
    float fy = v * img.height - 0.5f;
    int x0 = int(std::floor(fx));
    int y0 = int(std::floor(fy));
    float ax = fx - x0;
    float ay = fy - y0;
    auto cx = [&](int x) { return std::clamp(x, 0, img.width - 1); };
    auto cy = [&](int y) { return std::clamp(y, 0, img.height - 1); };
    int x1 = cx(x0 + 1), y1 = cy(y0 + 1);
    x0 = cx(x0);
    y0 = cy(y0);
    Vec3 out;
    float* o = &out.x;
    for (int c = 0; c < std::min(img.channels, 3); ++c) {
        float v00 = img.at(x0, y0, c), v10 = img.at(x1, y0, c);
        float v01 = img.at(x0, y1, c), v11 = img.at(x1, y1, c);
        o[c] = (1 - ay) * ((1 - ax) * v00 + ax * v10) + ay * ((1 - ax) * v01 + ax * v11);
    }
    return out;
}

Image to_grayscale(const Image& img) {
    if (img.channels == 1) return img;
    Image g(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            float s = 0.f;
            for (int c = 0; c < img.channels; ++c) s += img.at(x, y, c);
            g.at(x, y, 0) = s / img.channels;
        }
    return g;
}

}  // namespace morphsdf
