#include "renderer/trace.hpp"

#include <cmath>
#include <stdexcept>

namespace morphsdf {

void bound_ray(Ray& ray, float radius) {
    // ||o + s d||^2 = radius^2 with unit d
    float b = dot(ray.origin, ray.dir);
    float c = dot(ray.origin, ray.origin) - radius * radius;
    float disc = b * b - c;
    if (disc <= 0.f) {
        ray.near_t = 0.f;
        ray.far_t = -1.f;
        return;
    }
    float root = std::sqrt(disc);
    float s0 = -b - root, s1 = -b + root;
    if (s1 <= 0.f) {  // sphere entirely behind the origin
        ray.near_t = 0.f;
        ray.far_t = -1.f;
        return;
    }
    ray.near_t = std::max(0.f, s0);
    ray.far_t = s1;
}

std::vector<Ray> generate_rays(const Camera& cam) {
    validate_camera(cam);
    std::vector<Ray> rays;
    rays.reserve(size_t(cam.width) * size_t(cam.height));
    Vec3 origin = cam.center();
    for (int iy = 0; iy < cam.height; ++iy)
        for (int ix = 0; ix < cam.width; ++ix) {
            Vec3 dc{(float(ix) + 0.5f - cam.cx) / cam.focal,
                    (float(iy) + 0.5f - cam.cy) / cam.focal, 1.f};
            Ray r;
            r.origin = origin;
            r.dir = normalized(cam.to_world_dir(dc));
            bound_ray(r);
            rays.push_back(r);
        }
    return rays;
}

std::vector<TraceResult> sphere_trace(std::span<const Ray> rays, const FieldBatch& field,
                                      int max_steps, float eps) {
    if (max_steps < 1 || !(eps > 0.f)) throw std::invalid_argument("sphere_trace: bad budget");
    size_t n = rays.size();
    std::vector<TraceResult> res(n);
    std::vector<float> t(n);
    std::vector<size_t> active;
    active.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        t[i] = rays[i].near_t;
        res[i].t = rays[i].near_t;
        res[i].point = rays[i].at(rays[i].near_t);
        if (rays[i].near_t < rays[i].far_t) active.push_back(i);
    }

    std::vector<float> pts;
    std::vector<size_t> next;
    for (int step = 0; step <= max_steps && !active.empty(); ++step) {
        pts.resize(active.size() * 3);
        for (size_t k = 0; k < active.size(); ++k) {
            Vec3 p = rays[active[k]].at(t[active[k]]);
            pts[k * 3] = p.x;
            pts[k * 3 + 1] = p.y;
            pts[k * 3 + 2] = p.z;
        }
        ad::Tensor f = field(ad::Tensor({int(active.size()), 3}, pts));
        if (f.dim(0) != int(active.size()) || f.dim(1) != 1)
            throw std::invalid_argument("sphere_trace: field returned shape " + f.shape_str());
        auto fd = f.data();

        next.clear();
        for (size_t k = 0; k < active.size(); ++k) {
            size_t i = active[k];
            TraceResult& r = res[i];
            float fv = fd[k];
            if (!std::isfinite(fv)) throw std::runtime_error("sphere_trace: non-finite field value");
            float af = std::fabs(fv);
            r.point = rays[i].at(t[i]);
            r.t = t[i];
            r.steps = step;
            r.residual = af;
            if (af < r.best_abs) {
                r.best_abs = af;
                r.best_t = t[i];
            }
            if (step == 0 && fv < -eps) {
                r.hit = true;
                r.inside_start = true;
                continue;
            }
            if (af <= eps) {
                r.hit = true;
                r.converged = true;
                continue;
            }
            if (step == max_steps) {
                r.hit = af <= kMaskBandFactor * eps;
                continue;
            }
            t[i] += fv;
            if (t[i] > rays[i].far_t) {
                r.t = rays[i].far_t;  // left the scene bounds
                r.point = rays[i].at(r.t);
                continue;
            }
            next.push_back(i);
        }
        active.swap(next);
    }
    return res;
}

TraceResult sphere_trace(const Ray& ray, const FieldBatch& field, int max_steps, float eps) {
    return sphere_trace(std::span<const Ray>(&ray, 1), field, max_steps, eps)[0];
}

}  // namespace morphsdf
