#pragma once

#include <string>
#include <vector>

#include "core/image.hpp"
#include "core/rng.hpp"
#include "networks/model.hpp"
#include "renderer/render.hpp"

namespace morphsdf {

// One nonnegative weight per term; mvc defaults to off (its reference
// implementation needs a pretrained identity network; ours is a proxy).
struct LossWeights {
    float surface = 1.f;
    float eikonal = 0.1f;
    float normal = 1.f;
    float uv = 0.5f;
    float tex = 1.f;
    float img_l2 = 1.f;
    float img_percep = 0.5f;
    float reg = 1e-4f;
    float landmark = 1.f;
    float silhouette = 0.1f;
    float mvc = 0.f;
    float landmark2d = 1.f;
};
void validate(const LossWeights& w);  // nonnegative, finite

struct LossReport {
    struct Term {
        std::string name;
        float raw = 0.f;
        float weight = 0.f;
        float weighted = 0.f;
    };
    std::vector<Term> terms;
    float total = 0.f;

    bool finite() const;
    // "step=N surface=raw*w=weighted ... total=T"
    std::string log_line(int64_t step) const;
};

// Weighted sum built on the tape while the report collects raw values.
// Zero-weight terms must simply not be added (they then contribute neither
// value nor gradient).
struct LossAccum {
    ad::Tensor total;  // empty until the first add
    LossReport report;
    void add(const std::string& name, const ad::Tensor& raw, float weight);
    void skip(const std::string& name);  // keeps the log line shape stable
};

// Each geometry/correspondence term comes in two layers: a formula core on
// plain tensors (the equation itself, usable with any field values) and a
// model-level wrapper that runs the networks. Tests pin the cores against
// closed forms and the wrappers against finite differences.

// --- geometry terms (Eqs. 2-5) ---
// mean |f| over sdf values [N,1]
ad::Tensor surface_loss(const ad::Tensor& sdf_values);
ad::Tensor surface_loss(const Model& m, const ad::Tensor& X, const AvatarCodes& codes);
// mean (||grad|| - 1)^2 over gradient rows [N,3]
ad::Tensor eikonal_loss(const ad::Tensor& grads);
ad::Tensor eikonal_loss(const Model& m, const ad::Tensor& pts, const AvatarCodes& codes);
// mean ||grad - n||^2, unit normals [N,3]
ad::Tensor normal_loss(const ad::Tensor& grads, const ad::Tensor& normals);
ad::Tensor normal_loss(const Model& m, const ad::Tensor& X, const ad::Tensor& normals,
                       const AvatarCodes& codes);
// mean ||x - cycled(x)||^2 where cycled = ginv(g(x))
ad::Tensor uv_cycle_loss(const ad::Tensor& X, const ad::Tensor& cycled);
ad::Tensor uv_cycle_loss(const Model& m, const ad::Tensor& X, const AvatarCodes& codes);

// half box-uniform, half surface points perturbed by N(0, 0.05)
ad::Tensor eikonal_sample_points(const ad::Tensor& X, Rng& rng);

// --- correspondence terms (Eqs. 7, 11) ---
// mean ||gt_uv - uv||^2 + ||L - cycled||^2 over landmarks
ad::Tensor landmark_uv_loss(const ad::Tensor& uv, const ad::Tensor& gt_uv, const ad::Tensor& L,
                            const ad::Tensor& cycled);
ad::Tensor landmark_uv_loss(const Model& m, const ad::Tensor& L, const ad::Tensor& gt_uv,
                            const AvatarCodes& codes);
// mean ||tex_rgb - pred_rgb||^2, texture samples precomputed at the gt uvs
ad::Tensor texture_loss(const ad::Tensor& pred_rgb, const ad::Tensor& tex_rgb);
ad::Tensor texture_loss(const Model& m, const ad::Tensor& X, const ad::Tensor& tex_rgb,
                        const AvatarCodes& codes);

// --- image terms (Eq. 8) ---
// mean over rows of the summed squared channel difference
ad::Tensor image_l2_loss(const ad::Tensor& pred_rows, const ad::Tensor& gt_rows);
// 3-level Laplacian-pyramid L2 between [H,W,3] images (H, W divisible by 4):
// sum over levels of mean squared difference of the band images
ad::Tensor image_perceptual_loss(const ad::Tensor& pred_hwc, const ad::Tensor& gt_hwc);
// rows -> masked [H,W,C] image (zeros outside the given pixels)
ad::Tensor masked_image(const ad::Tensor& rows, const std::vector<int>& pixel_indices, int height,
                        int width);

// --- regularizers (Eq. 10, SS3.5) ---
// ||w_geom||^2 + ||w_color||^2 + ||w_expr||^2
ad::Tensor latent_reg(const AvatarCodes& codes);
// the argmin-|f| trace point of every ray inside the ground truth mask that
// the prediction missed (rays with no field samples are skipped)
std::vector<Vec3> silhouette_points(const std::vector<TraceResult>& traces,
                                    std::span<const Ray> rays, const Image& gt_mask);
// sum of f over those points; zero tensor when there is no such pixel
ad::Tensor silhouette_loss(const Model& m, const AvatarCodes& codes,
                           const std::vector<TraceResult>& traces, std::span<const Ray> rays,
                           const Image& gt_mask);
// L2 between 8x8 box-downsampled renders (identity-loss proxy, default off)
ad::Tensor multiview_consistency_loss(const ad::Tensor& img_a_hwc, const ad::Tensor& img_b_hwc);
// mean ||d - proj(p)||^2 / diag^2 over landmark points [N,3]
ad::Tensor landmark_2d_loss(const ad::Tensor& detected_px, const ad::Tensor& points3,
                            const Camera& cam);
// points3 = ginv(anchor uvs)
ad::Tensor landmark_2d_loss(const Model& m, const AvatarCodes& codes,
                            const ad::Tensor& detected_px, const ad::Tensor& anchors_uv,
                            const Camera& cam);

}  // namespace morphsdf
