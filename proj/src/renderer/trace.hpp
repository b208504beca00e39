#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "autodiff/tensor.hpp"
#include "renderer/camera.hpp"

namespace morphsdf {

// Scene bounding sphere; rays march only inside it.
inline constexpr float kSceneRadius = 1.5f;
inline constexpr int kTraceSteps = 50;
inline constexpr float kTraceEps = 1e-4f;
// Residuals in (eps, 10 eps] after the step budget still count as mask hits
// but are excluded from image-loss gradients.
inline constexpr float kMaskBandFactor = 10.f;

struct Ray {
    Vec3 origin{};
    Vec3 dir{};  // unit
    float near_t = 0.f;
    float far_t = -1.f;  // near >= far marks a ray that misses the scene bounds

    Vec3 at(float s) const { return origin + dir * s; }
};

struct TraceResult {
    bool hit = false;          // mask bit: converged, inside-start, or residual band
    bool converged = false;    // residual <= eps: eligible for image gradients
    bool inside_start = false; // field already negative at the near bound
    Vec3 point{};
    float t = 0.f;
    int steps = 0;             // advances taken before stopping
    float residual = std::numeric_limits<float>::infinity();  // |field| at point
    // argmin |field| along the march, for silhouette terms on miss rays
    float best_t = 0.f;
    float best_abs = std::numeric_limits<float>::infinity();
};

// Batch signed-distance oracle: [N,3] points -> [N,1] values. Must not
// record on any tape (callers evaluate under PauseRecording as needed).
using FieldBatch = std::function<ad::Tensor(const ad::Tensor&)>;

// One ray per pixel, row-major, through pixel centers; near/far from the
// scene bounding sphere (degenerate if the ray misses it).
std::vector<Ray> generate_rays(const Camera& cam);

// Fills near/far on a ray from the bounding-sphere intersection.
void bound_ray(Ray& ray, float radius = kSceneRadius);

// Classic sphere tracing: t <- t + field(at(t)) from near, stopping on
// |field| <= eps (hit), t > far, or the step budget. Each evaluation of
// `field` sees every still-active ray as one batch.
std::vector<TraceResult> sphere_trace(std::span<const Ray> rays, const FieldBatch& field,
                                      int max_steps = kTraceSteps, float eps = kTraceEps);
TraceResult sphere_trace(const Ray& ray, const FieldBatch& field, int max_steps = kTraceSteps,
                         float eps = kTraceEps);

}  // namespace morphsdf
