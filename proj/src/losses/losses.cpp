#include "losses/losses.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace morphsdf {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void require_points(const ad::Tensor& X, const char* who) {
    require(X.defined() && X.ndim() == 2 && X.dim(1) == 3,
            std::string(who) + ": expected [N,3] points, got " +
                (X.defined() ? X.shape_str() : "<undefined>"));
    require(X.dim(0) > 0, std::string(who) + ": empty point set");
}

void require_rows(const ad::Tensor& t, int rows, int cols, const char* who) {
    require(t.defined() && t.ndim() == 2 && t.dim(0) == rows && t.dim(1) == cols,
            std::string(who) + ": expected [" + std::to_string(rows) + "," + std::to_string(cols) +
                "], got " + (t.defined() ? t.shape_str() : "<undefined>"));
}

std::string fmt(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", double(v));
    return buf;
}

}  // namespace

void validate(const LossWeights& w) {
    const std::pair<const char*, float> fields[] = {
        {"surface", w.surface},       {"eikonal", w.eikonal},
        {"normal", w.normal},         {"uv", w.uv},
        {"tex", w.tex},               {"img_l2", w.img_l2},
        {"img_percep", w.img_percep}, {"reg", w.reg},
        {"landmark", w.landmark},     {"silhouette", w.silhouette},
        {"mvc", w.mvc},               {"landmark2d", w.landmark2d},
    };
    for (const auto& [name, v] : fields)
        require(std::isfinite(v) && v >= 0.f,
                std::string("loss weight ") + name + " must be finite and nonnegative, got " +
                    fmt(v));
}

bool LossReport::finite() const {
    if (!std::isfinite(total)) return false;
    for (const Term& t : terms)
        if (!std::isfinite(t.raw) || !std::isfinite(t.weighted)) return false;
    return true;
}

std::string LossReport::log_line(int64_t step) const {
    std::string line = "step=" + std::to_string(step);
    for (const Term& t : terms)
        line += " " + t.name + "=" + fmt(t.raw) + "/" + fmt(t.weight) + "/" + fmt(t.weighted);
    line += " total=" + fmt(total);
    return line;
}

void LossAccum::add(const std::string& name, const ad::Tensor& raw, float weight) {
    require(raw.defined() && raw.size() == 1, "loss term " + name + " must be a scalar");
    float rv = raw.value();
    float wv = rv * weight;
    report.terms.push_back({name, rv, weight, wv});
    if (weight == 0.f) return;  // absent from the total; no gradient flows
    ad::Tensor w = ad::mul_scalar(raw, weight);
    total = total.defined() ? ad::add(total, w) : w;
    report.total += wv;
}

void LossAccum::skip(const std::string& name) { report.terms.push_back({name, 0.f, 0.f, 0.f}); }

ad::Tensor surface_loss(const ad::Tensor& sdf_values) {
    require(sdf_values.defined() && sdf_values.size() > 0, "surface_loss: empty values");
    return ad::mean_all(ad::abs(sdf_values));
}

ad::Tensor surface_loss(const Model& m, const ad::Tensor& X, const AvatarCodes& codes) {
    require_points(X, "surface_loss");
    return surface_loss(m.sdf(X, codes));
}

ad::Tensor eikonal_loss(const ad::Tensor& grads) {
    require(grads.defined() && grads.ndim() == 2 && grads.dim(0) > 0 && grads.dim(1) == 3,
            "eikonal_loss: expected nonempty [N,3] gradients");
    ad::Tensor norm = ad::sqrt(ad::row_sum(ad::square(grads)));
    return ad::mean_all(ad::square(ad::add_scalar(norm, -1.f)));
}

ad::Tensor eikonal_loss(const Model& m, const ad::Tensor& pts, const AvatarCodes& codes) {
    require_points(pts, "eikonal_loss");
    return eikonal_loss(m.sdf_with_grad(pts, codes).grad);
}

ad::Tensor normal_loss(const ad::Tensor& grads, const ad::Tensor& normals) {
    require(grads.defined() && grads.ndim() == 2 && grads.dim(0) > 0 && grads.dim(1) == 3,
            "normal_loss: expected nonempty [N,3] gradients");
    require_rows(normals, grads.dim(0), 3, "normal_loss normals");
    return ad::mean_all(ad::row_sum(ad::square(ad::sub(grads, normals))));
}

ad::Tensor normal_loss(const Model& m, const ad::Tensor& X, const ad::Tensor& normals,
                       const AvatarCodes& codes) {
    require_points(X, "normal_loss");
    return normal_loss(m.sdf_with_grad(X, codes).grad, normals);
}

ad::Tensor uv_cycle_loss(const ad::Tensor& X, const ad::Tensor& cycled) {
    require_points(X, "uv_cycle_loss");
    require_rows(cycled, X.dim(0), 3, "uv_cycle_loss cycled");
    return ad::mean_all(ad::row_sum(ad::square(ad::sub(X, cycled))));
}

ad::Tensor uv_cycle_loss(const Model& m, const ad::Tensor& X, const AvatarCodes& codes) {
    require_points(X, "uv_cycle_loss");
    return uv_cycle_loss(X, m.inverse_uv(m.uv(X, codes), codes));
}

ad::Tensor eikonal_sample_points(const ad::Tensor& X, Rng& rng) {
    require_points(X, "eikonal_sample_points");
    int n = X.dim(0);
    std::vector<float> out(size_t(2 * n) * 3, 0.f);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) out[size_t(i) * 3 + size_t(k)] = rng.uniform(-1.5f, 1.5f);
    std::span<const float> xs = X.data();
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k)
            out[size_t(n + i) * 3 + size_t(k)] = xs[size_t(i) * 3 + size_t(k)] +
                                                 rng.normal(0.f, 0.05f);
    return ad::Tensor({2 * n, 3}, std::move(out));
}

ad::Tensor landmark_uv_loss(const ad::Tensor& uv, const ad::Tensor& gt_uv, const ad::Tensor& L,
                            const ad::Tensor& cycled) {
    require_points(L, "landmark_uv_loss");
    require_rows(uv, L.dim(0), 2, "landmark_uv_loss uv");
    require_rows(gt_uv, L.dim(0), 2, "landmark_uv_loss gt_uv");
    require_rows(cycled, L.dim(0), 3, "landmark_uv_loss cycled");
    ad::Tensor uv_term = ad::row_sum(ad::square(ad::sub(gt_uv, uv)));
    ad::Tensor cycle_term = ad::row_sum(ad::square(ad::sub(L, cycled)));
    return ad::mean_all(ad::add(uv_term, cycle_term));
}

ad::Tensor landmark_uv_loss(const Model& m, const ad::Tensor& L, const ad::Tensor& gt_uv,
                            const AvatarCodes& codes) {
    require_points(L, "landmark_uv_loss");
    ad::Tensor uv = m.uv(L, codes);
    return landmark_uv_loss(uv, gt_uv, L, m.inverse_uv(uv, codes));
}

ad::Tensor texture_loss(const ad::Tensor& pred_rgb, const ad::Tensor& tex_rgb) {
    require(pred_rgb.defined() && pred_rgb.ndim() == 2 && pred_rgb.dim(0) > 0 &&
                pred_rgb.dim(1) == 3,
            "texture_loss: expected nonempty [N,3] colors");
    require_rows(tex_rgb, pred_rgb.dim(0), 3, "texture_loss tex_rgb");
    return ad::mean_all(ad::row_sum(ad::square(ad::sub(tex_rgb, pred_rgb))));
}

ad::Tensor texture_loss(const Model& m, const ad::Tensor& X, const ad::Tensor& tex_rgb,
                        const AvatarCodes& codes) {
    require_points(X, "texture_loss");
    return texture_loss(m.color(m.uv(X, codes), codes), tex_rgb);
}

ad::Tensor image_l2_loss(const ad::Tensor& pred_rows, const ad::Tensor& gt_rows) {
    require(pred_rows.defined() && pred_rows.ndim() == 2 && pred_rows.dim(0) > 0 &&
                pred_rows.dim(1) == 3,
            "image_l2_loss: expected nonempty [M,3] pixel rows");
    require(same_shape(pred_rows, gt_rows), "image_l2_loss: shape mismatch " +
                                                pred_rows.shape_str() + " vs " +
                                                gt_rows.shape_str());
    return ad::mean_all(ad::row_sum(ad::square(ad::sub(pred_rows, gt_rows))));
}

ad::Tensor image_perceptual_loss(const ad::Tensor& pred_hwc, const ad::Tensor& gt_hwc) {
    require(pred_hwc.defined() && pred_hwc.ndim() == 3, "image_perceptual_loss: expected [H,W,C]");
    require(same_shape(pred_hwc, gt_hwc), "image_perceptual_loss: shape mismatch " +
                                              pred_hwc.shape_str() + " vs " + gt_hwc.shape_str());
    require(pred_hwc.dim(0) % 4 == 0 && pred_hwc.dim(1) % 4 == 0,
            "image_perceptual_loss: extents must be divisible by 4, got " + pred_hwc.shape_str());

    // Two octaves of a Laplacian pyramid plus the residual low-pass: bands
    // L0 = G0 - up(G1), L1 = G1 - up(G2), L2 = G2; loss sums the per-band MSE.
    auto bands = [](const ad::Tensor& g0) {
        ad::Tensor g1 = ad::avgpool2(g0);
        ad::Tensor g2 = ad::avgpool2(g1);
        std::vector<ad::Tensor> out;
        out.push_back(ad::sub(g0, ad::upsample2(g1)));
        out.push_back(ad::sub(g1, ad::upsample2(g2)));
        out.push_back(g2);
        return out;
    };
    std::vector<ad::Tensor> bp = bands(pred_hwc), bg = bands(gt_hwc);
    ad::Tensor loss;
    for (size_t l = 0; l < bp.size(); ++l) {
        ad::Tensor level = ad::mean_all(ad::square(ad::sub(bp[l], bg[l])));
        loss = loss.defined() ? ad::add(loss, level) : level;
    }
    return loss;
}

ad::Tensor masked_image(const ad::Tensor& rows, const std::vector<int>& pixel_indices, int height,
                        int width) {
    return ad::scatter_rows(rows, pixel_indices, height, width);
}

ad::Tensor latent_reg(const AvatarCodes& codes) {
    ad::Tensor s = ad::sum_all(ad::square(codes.geom));
    s = ad::add(s, ad::sum_all(ad::square(codes.color)));
    return ad::add(s, ad::sum_all(ad::square(codes.expr)));
}

std::vector<Vec3> silhouette_points(const std::vector<TraceResult>& traces,
                                    std::span<const Ray> rays, const Image& gt_mask) {
    require(gt_mask.channels == 1, "silhouette_points: mask must be single-channel");
    require(traces.size() == gt_mask.count() && traces.size() == rays.size(),
            "silhouette_points: traces/rays/mask extents disagree");
    // Pixels the ground truth covers but the prediction misses; each ray
    // contributes its minimum-|f| sample point.
    std::vector<Vec3> pts;
    for (size_t i = 0; i < traces.size(); ++i) {
        const TraceResult& tr = traces[i];
        if (tr.hit || gt_mask.pixels[i] < 0.5f) continue;
        if (!std::isfinite(tr.best_abs)) continue;  // degenerate ray, never sampled
        pts.push_back(rays[i].at(tr.best_t));
    }
    return pts;
}

ad::Tensor silhouette_loss(const Model& m, const AvatarCodes& codes,
                           const std::vector<TraceResult>& traces, std::span<const Ray> rays,
                           const Image& gt_mask) {
    std::vector<Vec3> pts = silhouette_points(traces, rays, gt_mask);
    if (pts.empty()) return ad::Tensor::scalar(0.f);
    std::vector<float> flat;
    flat.reserve(pts.size() * 3);
    for (const Vec3& p : pts) flat.insert(flat.end(), {p.x, p.y, p.z});
    ad::Tensor X({int(pts.size()), 3}, std::move(flat));
    return ad::sum_all(m.sdf(X, codes));
}

ad::Tensor multiview_consistency_loss(const ad::Tensor& img_a_hwc, const ad::Tensor& img_b_hwc) {
    require(img_a_hwc.defined() && img_a_hwc.ndim() == 3,
            "multiview_consistency_loss: expected [H,W,C]");
    require(same_shape(img_a_hwc, img_b_hwc), "multiview_consistency_loss: shape mismatch " +
                                                  img_a_hwc.shape_str() + " vs " +
                                                  img_b_hwc.shape_str());
    int h = img_a_hwc.dim(0), w = img_a_hwc.dim(1);
    require(h == w && h >= 8, "multiview_consistency_loss: expected square images, extent >= 8");
    ad::Tensor a = img_a_hwc, b = img_b_hwc;
    while (a.dim(0) > 8) {
        require(a.dim(0) % 2 == 0, "multiview_consistency_loss: extent " + std::to_string(h) +
                                       " does not pool down to 8");
        a = ad::avgpool2(a);
        b = ad::avgpool2(b);
    }
    require(a.dim(0) == 8, "multiview_consistency_loss: extent " + std::to_string(h) +
                               " does not pool down to 8");
    return ad::mean_all(ad::square(ad::sub(a, b)));
}

ad::Tensor landmark_2d_loss(const ad::Tensor& detected_px, const ad::Tensor& pts,
                            const Camera& cam) {
    require_points(pts, "landmark_2d_loss");
    require_rows(detected_px, pts.dim(0), 2, "landmark_2d_loss detected_px");
    // x_cam = R x + t as a batch: points @ R^T, then the translation row.
    std::vector<float> rt(9, 0.f);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rt[size_t(c) * 3 + size_t(r)] = cam.R[size_t(r) * 3 + size_t(c)];
    ad::Tensor cam_pts = ad::add_row(ad::matmul(pts, ad::Tensor({3, 3}, std::move(rt))),
                                     ad::Tensor({1, 3}, {cam.t.x, cam.t.y, cam.t.z}));
    ad::Tensor z = ad::slice_cols(cam_pts, 2, 1);
    {
        ad::Tensor zv = z;  // materialized once; tensors share storage
        for (float v : zv.data())
            require(v > 1e-6f, "landmark_2d_loss: projected landmark behind the camera");
    }
    ad::Tensor px = ad::add_scalar(
        ad::mul_scalar(ad::div(ad::slice_cols(cam_pts, 0, 1), z), cam.focal), cam.cx);
    ad::Tensor py = ad::add_scalar(
        ad::mul_scalar(ad::div(ad::slice_cols(cam_pts, 1, 1), z), cam.focal), cam.cy);
    ad::Tensor proj = ad::concat_cols({px, py});
    float diag_sq = float(cam.width) * float(cam.width) + float(cam.height) * float(cam.height);
    ad::Tensor err = ad::mean_all(ad::row_sum(ad::square(ad::sub(detected_px, proj))));
    return ad::mul_scalar(err, 1.f / diag_sq);
}

ad::Tensor landmark_2d_loss(const Model& m, const AvatarCodes& codes,
                            const ad::Tensor& detected_px, const ad::Tensor& anchors_uv,
                            const Camera& cam) {
    require(anchors_uv.defined() && anchors_uv.ndim() == 2 && anchors_uv.dim(0) > 0 &&
                anchors_uv.dim(1) == 2,
            "landmark_2d_loss: expected nonempty [N,2] anchor uvs");
    return landmark_2d_loss(detected_px, m.inverse_uv(anchors_uv, codes), cam);
}

}  // namespace morphsdf
