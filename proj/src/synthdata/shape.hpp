#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/rng.hpp"
#include "core/vec.hpp"
#include "renderer/trace.hpp"

namespace morphsdf {

// Star-shaped radial geometry: r(dir) = r0 + sum_i a_i Y_i(dir) over the 9
// real spherical harmonics of degree <= 2, plus per-expression Gaussian
// bumps. Every ray from the origin crosses the surface exactly once.
struct SubjectSpec {
    float r0 = 0.85f;
    std::array<float, 9> sh{};  // Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22
    uint64_t texture_seed = 0;
};

struct RadialBump {
    Vec3 center{0, 0, 1};  // unit direction
    float amp = 0.f;       // |amp| <= 0.12
    float width = 0.5f;    // radians, in [0.35, 0.8]
};

struct ExpressionSpec {
    std::vector<RadialBump> bumps;  // empty = neutral expression
};

// A subject + expression pair with its precomputed Lipschitz bound, ready
// for field evaluation.
struct Shape {
    SubjectSpec subject;
    ExpressionSpec expr;
    float lipschitz = 1.f;
};

// Radius of the composed radial function along a unit direction.
double radial(const SubjectSpec& s, const ExpressionSpec& e, double dx, double dy, double dz);
float radial(const Shape& shape, const Vec3& dir);

// Level set (||p|| - r(dir)) / lipschitz: zero exactly on the surface,
// negative inside, a conservative underestimate of true distance outside.
// The all-zero-harmonic subject with r0 = 1 gives the exact unit-sphere SDF.
// p = 0 returns the limit -r0 / lipschitz.
float analytic_field(const Shape& shape, const Vec3& p);
FieldBatch analytic_field_batch(const Shape& shape);

// Outward unit surface normal (gradient direction of the level set),
// central differences in double precision.
Vec3 surface_normal(const Shape& shape, const Vec3& p);

// Max tangential gradient of r over a dense direction grid, and the derived
// field Lipschitz bound sqrt(1 + (1.05 G / 0.3)^2).
float max_radial_slope(const SubjectSpec& s, const ExpressionSpec& e);
float lipschitz_bound(float max_slope);
Shape make_shape(const SubjectSpec& s, const ExpressionSpec& e);

// Rejection-sampled admissible draws; throw std::runtime_error after 64
// failed attempts. Neutral expressions (no bumps) are always admissible.
SubjectSpec draw_subject(Rng& rng);
ExpressionSpec draw_expression(const SubjectSpec& s, Rng& rng);

// Spherical parameterization: u = theta / pi (polar angle from +z),
// v = phi / 2pi + 0.5 (azimuth from +x, y up the seam). Poles get v = 0.5.
Vec2 gt_uv(const Vec3& p);
// Surface point whose gt_uv equals the given uv.
Vec3 gt_uv_inverse(const Shape& shape, const Vec2& uv);

// 16 anchor uv positions shared by every subject; 4 of them (indices in
// kFiducialAnchors) carry high-contrast texture fiducials.
inline constexpr int kNumLandmarks = 16;
extern const std::array<Vec2, kNumLandmarks> kLandmarkAnchors;
extern const std::array<int, 4> kFiducialAnchors;

struct Landmark {
    int id = 0;
    Vec3 p{};
    Vec2 uv{};
};
std::vector<Landmark> landmarks(const Shape& shape);

}  // namespace morphsdf
