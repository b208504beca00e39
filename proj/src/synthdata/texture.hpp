#pragma once

#include <array>
#include <cstdint>

#include "core/image.hpp"
#include "synthdata/shape.hpp"

namespace morphsdf {

// Smooth multi-frequency color field over uv plus 4 saturated fiducial
// blobs at fixed landmark anchors. Integer frequencies in v keep the field
// continuous across the azimuth seam. One parameter set per subject.
struct TextureParams {
    struct Wave {
        int fu = 1, fv = 1;
        float phase = 0.f;
        float amp = 0.f;
    };
    std::array<std::array<Wave, 3>, 3> waves{};  // [channel][component]
    std::array<float, 3> base{0.5f, 0.5f, 0.5f};
};

TextureParams draw_texture_params(uint64_t texture_seed);

// Analytic color at (u, v), fiducials composited on top, clamped to [0,1].
Vec3 eval_texture(const TextureParams& params, float u, float v);

// Rasterize at texel centers ((i+0.5)/size).
Image bake_texture(const TextureParams& params, int size = 256);

inline constexpr float kFiducialRadiusUv = 0.045f;
extern const std::array<Vec3, 4> kFiducialColors;

}  // namespace morphsdf
