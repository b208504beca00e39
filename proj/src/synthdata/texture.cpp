#include "synthdata/texture.hpp"

#include <algorithm>
#include <cmath>

#include "core/rng.hpp"

namespace morphsdf {

const std::array<Vec3, 4> kFiducialColors = {{
    {0.95f, 0.05f, 0.05f},
    {0.05f, 0.85f, 0.10f},
    {0.10f, 0.15f, 0.95f},
    {0.95f, 0.85f, 0.05f},
}};

TextureParams draw_texture_params(uint64_t texture_seed) {
    Rng rng(texture_seed);
    TextureParams p;
    for (int c = 0; c < 3; ++c) {
        p.base[size_t(c)] = rng.uniform(0.35f, 0.65f);
        for (int k = 0; k < 3; ++k) {
            TextureParams::Wave& w = p.waves[size_t(c)][size_t(k)];
            w.fu = 1 + rng.uniform_int(4);
            w.fv = 1 + rng.uniform_int(4);
            w.phase = rng.uniform(0.f, 6.2831853f);
            w.amp = rng.uniform(0.03f, 0.09f);
        }
    }
    return p;
}

Vec3 eval_texture(const TextureParams& params, float u, float v) {
    Vec3 c;
    float* ch = &c.x;
    for (int i = 0; i < 3; ++i) {
        double acc = params.base[size_t(i)];
        for (const TextureParams::Wave& w : params.waves[size_t(i)])
            acc += double(w.amp) *
                   std::sin(2.0 * 3.14159265358979324 * (w.fu * double(u) + w.fv * double(v)) +
                            double(w.phase));
        ch[i] = float(acc);
    }
    for (size_t k = 0; k < kFiducialAnchors.size(); ++k) {
        Vec2 a = kLandmarkAnchors[size_t(kFiducialAnchors[k])];
        float du = u - a.x;
        // azimuth wraps
        float dv = v - a.y;
        if (dv > 0.5f) dv -= 1.f;
        if (dv < -0.5f) dv += 1.f;
        float d2 = du * du + dv * dv;
        float s = kFiducialRadiusUv;
        float wgt = std::exp(-d2 / (2.f * s * s * 0.25f));
        if (wgt < 1e-3f) continue;
        c.x = c.x + (kFiducialColors[k].x - c.x) * wgt;
        c.y = c.y + (kFiducialColors[k].y - c.y) * wgt;
        c.z = c.z + (kFiducialColors[k].z - c.z) * wgt;
    }
    c.x = std::clamp(c.x, 0.f, 1.f);
    c.y = std::clamp(c.y, 0.f, 1.f);
    c.z = std::clamp(c.z, 0.f, 1.f);
    return c;
}

Image bake_texture(const TextureParams& params, int size) {
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            Vec3 c = eval_texture(params, (float(x) + 0.5f) / float(size),
                                  (float(y) + 0.5f) / float(size));
            img.at(x, y, 0) = c.x;
            img.at(x, y, 1) = c.y;
            img.at(x, y, 2) = c.z;
        }
    return img;
}

}  // namespace morphsdf
