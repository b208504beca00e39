#include "renderer/render.hpp"

#include <cmath>
#include <stdexcept>

#include "autodiff/dual.hpp"
#include "autodiff/ops.hpp"
#include "autodiff/tape.hpp"

namespace morphsdf {

FieldBatch model_field(const Model& model, const AvatarCodes& codes) {
    return [&model, &codes](const ad::Tensor& pts) {
        ad::PauseRecording pause;
        return model.sdf(pts, codes);
    };
}

TraceImage trace_camera(const FieldBatch& field, const Camera& cam, int max_steps, float eps) {
    TraceImage out;
    std::vector<Ray> rays = generate_rays(cam);
    out.traces = sphere_trace(rays, field, max_steps, eps);
    out.depth = Image(cam.width, cam.height, 1, 0.f);
    out.mask = Image(cam.width, cam.height, 1, 0.f);
    for (size_t i = 0; i < out.traces.size(); ++i) {
        const TraceResult& tr = out.traces[i];
        if (tr.hit) {
            out.depth.pixels[i] = tr.t;
            out.mask.pixels[i] = 1.f;
        }
    }
    return out;
}

DiffHits differentiable_hit_batch(const Model& model, const AvatarCodes& codes,
                                  std::span<const Vec3> hit_points, std::span<const Vec3> dirs) {
    if (hit_points.size() != dirs.size())
        throw std::invalid_argument("differentiable_hit: points/dirs size mismatch");
    DiffHits out;
    size_t n = hit_points.size();
    if (n == 0) {
        out.points = ad::Tensor({0, 3}, std::vector<float>{});
        return out;
    }

    std::vector<float> flat(n * 3);
    for (size_t i = 0; i < n; ++i) {
        flat[i * 3] = hit_points[i].x;
        flat[i * 3 + 1] = hit_points[i].y;
        flat[i * 3 + 2] = hit_points[i].z;
    }

    // Detached surface gradient for the denominators.
    std::vector<float> denom_all(n);
    {
        ad::PauseRecording pause;
        ad::Tensor grads = model.sdf_with_grad(ad::Tensor({int(n), 3}, flat), codes).grad;
        auto gd = grads.data();
        for (size_t i = 0; i < n; ++i)
            denom_all[i] = gd[i * 3] * dirs[i].x + gd[i * 3 + 1] * dirs[i].y + gd[i * 3 + 2] * dirs[i].z;
    }

    std::vector<float> kept_pts, kept_dirs, inv_denom;
    for (size_t i = 0; i < n; ++i) {
        if (std::fabs(denom_all[i]) < kGrazingDenomEps) continue;
        out.kept.push_back(int(i));
        out.denoms.push_back(denom_all[i]);
        kept_pts.insert(kept_pts.end(), {flat[i * 3], flat[i * 3 + 1], flat[i * 3 + 2]});
        kept_dirs.insert(kept_dirs.end(), {dirs[i].x, dirs[i].y, dirs[i].z});
        inv_denom.push_back(1.f / denom_all[i]);
    }
    int m = int(out.kept.size());
    if (m == 0) {
        out.points = ad::Tensor({0, 3}, std::vector<float>{});
        return out;
    }

    ad::Tensor xhat({m, 3}, kept_pts);
    ad::Tensor d({m, 3}, kept_dirs);
    ad::Tensor w({m, 1}, inv_denom);
    ad::Tensor f = model.sdf(xhat, codes);              // the one taped evaluation
    ad::Tensor shift = ad::mul_col(d, ad::mul(f, w));   // d * f / <grad, d>
    out.points = ad::sub(xhat, shift);
    return out;
}

DiffHit differentiable_hit(const Ray& ray, const Model& model, const AvatarCodes& codes,
                           const TraceResult& frozen) {
    if (!frozen.hit) throw std::invalid_argument("differentiable_hit: ray did not hit");
    Vec3 p = frozen.point;
    DiffHits batch = differentiable_hit_batch(model, codes, {&p, 1}, {&ray.dir, 1});
    DiffHit out;
    out.ok = !batch.kept.empty();
    if (out.ok) out.point = batch.points;
    return out;
}

RenderResult render_image(const Model& model, const AvatarCodes& codes, const Camera& cam,
                          const Image* texture, int max_steps, float eps) {
    ad::PauseRecording pause;
    RenderResult out;
    FieldBatch field = model_field(model, codes);
    TraceImage ti = trace_camera(field, cam, max_steps, eps);
    out.depth = std::move(ti.depth);
    out.mask = std::move(ti.mask);
    out.traces = std::move(ti.traces);
    out.image = Image(cam.width, cam.height, 3, kBackgroundGray);

    std::vector<size_t> hit_idx;
    std::vector<float> pts;
    for (size_t i = 0; i < out.traces.size(); ++i)
        if (out.traces[i].hit) {
            hit_idx.push_back(i);
            pts.insert(pts.end(),
                       {out.traces[i].point.x, out.traces[i].point.y, out.traces[i].point.z});
        }
    if (hit_idx.empty()) return out;

    ad::Tensor uv = model.uv(ad::Tensor({int(hit_idx.size()), 3}, pts), codes);
    auto uvd = uv.data();
    if (texture) {
        for (size_t k = 0; k < hit_idx.size(); ++k) {
            Vec3 c = sample_bilinear(*texture, uvd[k * 2], uvd[k * 2 + 1]);
            size_t px = hit_idx[k] * 3;
            out.image.pixels[px] = c.x;
            out.image.pixels[px + 1] = c.y;
            out.image.pixels[px + 2] = c.z;
        }
    } else {
        ad::Tensor rgb = model.color(uv, codes);
        auto cd = rgb.data();
        for (size_t k = 0; k < hit_idx.size(); ++k) {
            size_t px = hit_idx[k] * 3;
            out.image.pixels[px] = cd[k * 3];
            out.image.pixels[px + 1] = cd[k * 3 + 1];
            out.image.pixels[px + 2] = cd[k * 3 + 2];
        }
    }
    return out;
}

}  // namespace morphsdf
