#pragma once

#include <optional>
#include <vector>

#include "core/image.hpp"
#include "networks/model.hpp"
#include "renderer/trace.hpp"

namespace morphsdf {

// Flat background for miss pixels, matching the synthetic data.
inline constexpr float kBackgroundGray = 0.5f;
// Hits with |grad_f . dir| below this are too tangential for the implicit
// correction; their pixels contribute no gradient.
inline constexpr float kGrazingDenomEps = 1e-3f;

// Traced geometry of one camera against an arbitrary field: per-pixel trace
// records plus depth (t at hits, 0 elsewhere) and the 0/1 hit mask. The
// same path renders the learned model and the analytic ground truth, so
// stored depth maps agree bit-for-bit.
struct TraceImage {
    std::vector<TraceResult> traces;  // row-major, one per pixel
    Image depth;                      // 1 channel
    Image mask;                       // 1 channel
};
TraceImage trace_camera(const FieldBatch& field, const Camera& cam, int max_steps = kTraceSteps,
                        float eps = kTraceEps);

// Surface points as a differentiable function of the field parameters:
//   x(theta) = x_hat - d * f_theta(x_hat) / <grad_x f(x_hat), d>
// with x_hat (the traced hit) and the gradient treated as constants.
// Rows whose denominator is below kGrazingDenomEps are dropped; `kept`
// lists the surviving input indices, `points` is [|kept|, 3] and carries
// tape history iff the model/codes are bound to a tape.
struct DiffHits {
    std::vector<int> kept;
    ad::Tensor points;
    std::vector<float> denoms;  // per kept row, the detached <grad, d>
};
DiffHits differentiable_hit_batch(const Model& model, const AvatarCodes& codes,
                                  std::span<const Vec3> hit_points, std::span<const Vec3> dirs);

// Single-ray convenience over the batch form. Requires frozen.hit.
struct DiffHit {
    bool ok = false;
    ad::Tensor point;  // [1,3]
};
DiffHit differentiable_hit(const Ray& ray, const Model& model, const AvatarCodes& codes,
                           const TraceResult& frozen);

// Full forward render: sphere trace the model's SDF, then color converged
// and band hits through uv -> color (or `texture` sampled at the predicted
// uv when given — the texture-editing path). Inference only: never records
// on a tape, even for bound models.
struct RenderResult {
    Image image;  // 3 channels
    Image depth;  // 1 channel, ray travel distance at hits
    Image mask;   // 1 channel, 0/1
    std::vector<TraceResult> traces;
};
RenderResult render_image(const Model& model, const AvatarCodes& codes, const Camera& cam,
                          const Image* texture = nullptr, int max_steps = kTraceSteps,
                          float eps = kTraceEps);

// Batch field adapter over Model::sdf (no tape).
FieldBatch model_field(const Model& model, const AvatarCodes& codes);

}  // namespace morphsdf
