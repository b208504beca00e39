#include "inversion/invert.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "core/image_io.hpp"
#include "renderer/trace.hpp"
#include "synthdata/shape.hpp"
#include "trainer/trainer.hpp"

namespace morphsdf {

using ad::Tensor;

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

Tensor clone_tensor(const Tensor& t) {
    auto d = t.data();
    return Tensor(t.shape(), std::vector<float>(d.begin(), d.end()));
}

float cosine_lr(float lr, int64_t step, int64_t steps) {
    double f = 0.5 * (1.0 + std::cos(3.14159265358979323846 * double(step) / double(steps)));
    return float(double(lr) * f);
}

// One jittered pixel per lattice cell; the jitter is shared across cells so
// the whole grid shifts together, and samples stay unique for any image at
// least as wide as the lattice.
struct LatticeRays {
    std::vector<Ray> rays;
    std::vector<int> view_px;  // pixel index per ray
    std::vector<int> cell;     // lattice cell per ray
};

LatticeRays lattice_rays(const Camera& cam, int lattice, Rng& rng) {
    float jx = rng.uniform(), jy = rng.uniform();
    std::vector<Ray> all = generate_rays(cam);
    LatticeRays out;
    out.rays.reserve(size_t(lattice) * size_t(lattice));
    for (int ly = 0; ly < lattice; ++ly)
        for (int lx = 0; lx < lattice; ++lx) {
            int x = std::min(int((float(lx) + jx) * float(cam.width) / float(lattice)),
                             cam.width - 1);
            int y = std::min(int((float(ly) + jy) * float(cam.height) / float(lattice)),
                             cam.height - 1);
            int px = y * cam.width + x;
            out.rays.push_back(all[size_t(px)]);
            out.view_px.push_back(px);
            out.cell.push_back(ly * lattice + lx);
        }
    return out;
}

// Ops run against `net`/`codes` (whichever side is on the tape); marching and
// hit selection run on the plain pair.
struct TermCtx {
    const Model& net;
    const AvatarCodes& codes;
    const Model& plain_net;
    const AvatarCodes& plain_codes;
};

// The implicit hit correction divides by <grad f, dir>, so grazing hits
// amplify image gradients by up to 1/kGrazingDenomEps. The trainer's Adam
// absorbs that; the latent phase runs plain gradient descent, so inversion
// keeps only comfortably front-facing hits.
constexpr float kHitDenomCutoff = 0.1f;

struct HitSet {
    std::vector<Vec3> points, dirs;
    std::vector<int> rows;  // trace row per kept hit
};

HitSet facing_hits(const Model& m, const AvatarCodes& codes,
                   const std::vector<TraceResult>& traces, std::span<const Ray> rays) {
    HitSet h;
    std::vector<float> flat;
    std::vector<int> cand;
    for (size_t i = 0; i < traces.size(); ++i)
        if (traces[i].converged) {
            const Vec3& p = traces[i].point;
            flat.insert(flat.end(), {p.x, p.y, p.z});
            cand.push_back(int(i));
        }
    if (cand.empty()) return h;
    ad::ValueAndGrad vg = m.sdf_with_grad(Tensor({int(cand.size()), 3}, std::move(flat)), codes);
    auto g = vg.grad.data();
    for (size_t k = 0; k < cand.size(); ++k) {
        const Vec3& d = rays[size_t(cand[k])].dir;
        float denom = g[k * 3] * d.x + g[k * 3 + 1] * d.y + g[k * 3 + 2] * d.z;
        if (std::fabs(denom) < kHitDenomCutoff) continue;
        h.points.push_back(traces[size_t(cand[k])].point);
        h.dirs.push_back(d);
        h.rows.push_back(cand[k]);
    }
    return h;
}

void add_terms(LossAccum& acc, const TermCtx& ctx, const InversionInput& in, const Camera& cam,
               const InversionOptions& opt, uint64_t phase, int64_t step, bool with_silhouette) {
    const LossWeights& w = opt.weights;
    Rng rng = Rng::fork(opt.seed, {phase, uint64_t(step)});
    LatticeRays lat = lattice_rays(cam, opt.lattice, rng);
    std::vector<TraceResult> traces =
        sphere_trace(lat.rays, model_field(ctx.plain_net, ctx.plain_codes));

    HitSet hits = facing_hits(ctx.plain_net, ctx.plain_codes, traces, lat.rays);

    Tensor pred_masked;  // kept for the multi-view term
    bool have_image = false;
    if (!hits.points.empty() && (w.img_l2 > 0.f || w.img_percep > 0.f || w.mvc > 0.f)) {
        DiffHits dh = differentiable_hit_batch(ctx.net, ctx.codes, hits.points, hits.dirs);
        if (!dh.kept.empty()) {
            Tensor rows = ctx.net.color(ctx.net.uv(dh.points, ctx.codes), ctx.codes);
            std::vector<float> gt;
            std::vector<int> cells;
            for (int k : dh.kept) {
                int ray = hits.rows[size_t(k)];
                int px = lat.view_px[size_t(ray)];
                for (int c = 0; c < 3; ++c)
                    gt.push_back(in.image.pixels[size_t(px) * 3 + size_t(c)]);
                cells.push_back(lat.cell[size_t(ray)]);
            }
            Tensor gt_rows({int(dh.kept.size()), 3}, std::move(gt));
            pred_masked = masked_image(rows, cells, opt.lattice, opt.lattice);
            have_image = true;
            if (w.img_l2 > 0.f)
                acc.add("img_l2", image_l2_loss(rows, gt_rows), w.img_l2);
            else
                acc.skip("img_l2");
            if (w.img_percep > 0.f)
                acc.add("img_percep",
                        image_perceptual_loss(pred_masked,
                                              masked_image(gt_rows, cells, opt.lattice, opt.lattice)),
                        w.img_percep);
            else
                acc.skip("img_percep");
        }
    }
    if (!have_image) {
        acc.skip("img_l2");
        acc.skip("img_percep");
    }

    if (with_silhouette) {
        if (w.silhouette > 0.f) {
            Image sub_mask(int(lat.rays.size()), 1, 1);
            for (size_t i = 0; i < lat.rays.size(); ++i)
                sub_mask.pixels[i] = in.mask.pixels[size_t(lat.view_px[i])];
            acc.add("silhouette",
                    silhouette_loss(ctx.net, ctx.codes, traces, lat.rays, sub_mask), w.silhouette);
        } else {
            acc.skip("silhouette");
        }
    }

    if (w.mvc > 0.f && have_image) {
        CameraAdjust wobble{rng.uniform(-0.2f, 0.2f), rng.uniform(-0.15f, 0.15f), 0.f};
        Camera cam2 = orbit_camera(cam, wobble);
        LatticeRays lat2 = lattice_rays(cam2, opt.lattice, rng);
        std::vector<TraceResult> tr2 =
            sphere_trace(lat2.rays, model_field(ctx.plain_net, ctx.plain_codes));
        HitSet hits2 = facing_hits(ctx.plain_net, ctx.plain_codes, tr2, lat2.rays);
        bool added = false;
        if (!hits2.points.empty()) {
            DiffHits dh2 = differentiable_hit_batch(ctx.net, ctx.codes, hits2.points, hits2.dirs);
            if (!dh2.kept.empty()) {
                Tensor c2 = ctx.net.color(ctx.net.uv(dh2.points, ctx.codes), ctx.codes);
                std::vector<int> cells2;
                for (int k : dh2.kept) cells2.push_back(lat2.cell[size_t(hits2.rows[size_t(k)])]);
                acc.add("mvc",
                        multiview_consistency_loss(
                            pred_masked, masked_image(c2, cells2, opt.lattice, opt.lattice)),
                        w.mvc);
                added = true;
            }
        }
        if (!added) acc.skip("mvc");
    } else {
        acc.skip("mvc");
    }

    if (w.landmark2d > 0.f && !in.landmark_ids.empty()) {
        std::vector<float> auv, dpx;
        for (size_t k = 0; k < in.landmark_ids.size(); ++k) {
            const Vec2& uv = kLandmarkAnchors[size_t(in.landmark_ids[k])];
            auv.insert(auv.end(), {uv.x, uv.y});
            dpx.insert(dpx.end(), {in.landmark_px[k].x, in.landmark_px[k].y});
        }
        int k = int(in.landmark_ids.size());
        acc.add("landmark2d",
                landmark_2d_loss(ctx.net, ctx.codes, Tensor({k, 2}, std::move(dpx)),
                                 Tensor({k, 2}, std::move(auv)), cam),
                w.landmark2d);
    } else {
        acc.skip("landmark2d");
    }

    if (w.reg > 0.f)
        acc.add("reg", latent_reg(ctx.codes), w.reg);
    else
        acc.skip("reg");
}

void abort_if_nonfinite(const LossReport& report, const char* what, int64_t step) {
    if (report.finite()) return;
    for (const auto& t : report.terms)
        if (!std::isfinite(t.raw) || !std::isfinite(t.weighted))
            throw std::runtime_error(std::string(what) + " aborted at step " +
                                     std::to_string(step) + ": non-finite loss term '" + t.name +
                                     "'");
    throw std::runtime_error(std::string(what) + " aborted at step " + std::to_string(step) +
                             ": non-finite total loss");
}

// Alignment score for camera refinement: color error where prediction and
// mask agree on foreground, a unit penalty where they disagree.
float camera_objective(const Model& m, const AvatarCodes& codes, const InversionInput& in,
                       const Camera& cam, int lattice, Rng& rng) {
    LatticeRays lat = lattice_rays(cam, lattice, rng);
    std::vector<TraceResult> traces = sphere_trace(lat.rays, model_field(m, codes));
    std::vector<float> pts;
    std::vector<int> hit_rows;
    for (size_t i = 0; i < traces.size(); ++i)
        if (traces[i].converged) {
            const Vec3& p = traces[i].point;
            pts.insert(pts.end(), {p.x, p.y, p.z});
            hit_rows.push_back(int(i));
        }
    std::vector<float> colors;
    if (!hit_rows.empty()) {
        Tensor rows = m.color(m.uv(Tensor({int(hit_rows.size()), 3}, std::move(pts)), codes), codes);
        auto d = rows.data();
        colors.assign(d.begin(), d.end());
    }
    std::vector<int> hit_of(lat.rays.size(), -1);
    for (size_t k = 0; k < hit_rows.size(); ++k) hit_of[size_t(hit_rows[k])] = int(k);
    double acc = 0.0;
    for (size_t i = 0; i < lat.rays.size(); ++i) {
        bool fg = in.mask.pixels[size_t(lat.view_px[i])] >= 0.5f;
        int k = hit_of[i];
        if (k >= 0 && fg) {
            for (int c = 0; c < 3; ++c) {
                double d = double(colors[size_t(k) * 3 + size_t(c)]) -
                           double(in.image.pixels[size_t(lat.view_px[i]) * 3 + size_t(c)]);
                acc += d * d;
            }
        } else if ((k >= 0) != fg) {
            acc += 1.0;
        }
    }
    return float(acc / double(lat.rays.size()));
}

CameraAdjust adjust_of(const Tensor& p) {
    auto d = p.data();
    return {d[0], d[1], d[2]};
}

void refine_camera_step(const Model& model, const AvatarCodes& codes, const InversionInput& in,
                        Tensor& cam_param, AdamState& cam_opt, const InversionOptions& opt,
                        int64_t step) {
    const float h = 0.01f;
    std::vector<float> g(3);
    for (int k = 0; k < 3; ++k) {
        float probes[2];
        for (int s = 0; s < 2; ++s) {
            CameraAdjust a = adjust_of(cam_param);
            float dh = s == 0 ? h : -h;
            if (k == 0) a.yaw += dh;
            if (k == 1) a.pitch += dh;
            if (k == 2) a.log_dist += dh;
            // both probes of a pair see the same jitter
            Rng rng = Rng::fork(opt.seed, {0xca3e, uint64_t(step)});
            probes[s] = camera_objective(model, codes, in, orbit_camera(in.camera, a),
                                         opt.lattice, rng);
        }
        g[size_t(k)] = (probes[0] - probes[1]) / (2.f * h);
    }
    std::vector<ParamUpdate> ups{{"camera", &cam_param, Tensor({1, 3}, std::move(g)), 3e-3f}};
    adam_step(ups, cam_opt);
}

bool finite_tensor(const Tensor& t) {
    for (float v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

void validate(const InversionInput& in) {
    require(in.image.width > 0 && in.image.height > 0 && in.image.channels == 3,
            "inversion input: image must be a nonempty [H,W,3] grid");
    require(in.mask.width == in.image.width && in.mask.height == in.image.height &&
                in.mask.channels == 1,
            "inversion input: mask extents must match the image");
    for (float v : in.image.pixels)
        require(std::isfinite(v), "inversion input: image has non-finite values");
    for (float v : in.mask.pixels)
        require(std::isfinite(v) && v >= 0.f && v <= 1.f,
                "inversion input: mask values must lie in [0,1]");
    validate_camera(in.camera);
    require(in.camera.width == in.image.width && in.camera.height == in.image.height,
            "inversion input: camera extents must match the image");
    require(in.landmark_ids.size() == in.landmark_px.size(),
            "inversion input: landmark ids and pixels must pair up");
    for (size_t k = 0; k < in.landmark_ids.size(); ++k) {
        int id = in.landmark_ids[k];
        require(id >= 0 && id < kNumLandmarks, "inversion input: landmark id out of range");
        const Vec2& px = in.landmark_px[k];
        require(px.x >= 0.f && px.x < float(in.image.width) && px.y >= 0.f &&
                    px.y < float(in.image.height),
                "inversion input: landmark pixel outside the image");
    }
}

InversionInput input_from_view(const View& view, const Shape& shape) {
    InversionInput in;
    in.image = view.image;
    in.mask = view.mask;
    in.camera = view.camera;
    for (const Landmark& m : landmarks(shape)) {
        Vec2 px;
        if (!project(view.camera, m.p, &px)) continue;
        if (px.x < 0.f || px.x >= float(view.camera.width) || px.y < 0.f ||
            px.y >= float(view.camera.height))
            continue;
        in.landmark_ids.push_back(m.id);
        in.landmark_px.push_back(px);
    }
    return in;
}

void save_inversion_input(const std::string& dir, const InversionInput& in) {
    validate(in);
    std::filesystem::create_directories(dir);
    save_png(dir + "/image.png", in.image);
    save_png(dir + "/mask.png", in.mask);
    save_camera(dir + "/camera.txt", in.camera);
    std::ofstream os(dir + "/landmarks.txt");
    if (!os) throw std::runtime_error("save_inversion_input: cannot write " + dir);
    os << in.landmark_ids.size() << "\n";
    for (size_t k = 0; k < in.landmark_ids.size(); ++k)
        os << in.landmark_ids[k] << " " << in.landmark_px[k].x << " " << in.landmark_px[k].y
           << "\n";
}

InversionInput load_inversion_input(const std::string& dir) {
    InversionInput in;
    in.image = load_png(dir + "/image.png");
    in.mask = load_png(dir + "/mask.png");
    for (float& v : in.mask.pixels) v = v >= 0.5f ? 1.f : 0.f;
    in.camera = load_camera(dir + "/camera.txt");
    std::ifstream is(dir + "/landmarks.txt");
    if (!is) throw std::runtime_error("load_inversion_input: cannot open " + dir +
                                      "/landmarks.txt");
    size_t n = 0;
    is >> n;
    for (size_t k = 0; k < n; ++k) {
        int id;
        float x, y;
        if (!(is >> id >> x >> y))
            throw std::runtime_error("load_inversion_input: truncated landmarks.txt");
        in.landmark_ids.push_back(id);
        in.landmark_px.push_back({x, y});
    }
    validate(in);
    return in;
}

Camera orbit_camera(const Camera& cam, const CameraAdjust& adj) {
    if (adj.yaw == 0.f && adj.pitch == 0.f && adj.log_dist == 0.f) return cam;
    Vec3 eye = cam.center();
    float dist = norm(eye);
    require(dist > 1e-6f, "orbit_camera: camera sits at the origin");
    float yaw = std::atan2(eye.x, eye.z) + adj.yaw;
    float pitch = std::asin(std::clamp(eye.y / dist, -1.f, 1.f)) + adj.pitch;
    pitch = std::clamp(pitch, -1.5f, 1.5f);  // keep the +y up vector usable
    float nd = dist * std::exp(adj.log_dist);
    Vec3 neye{nd * std::sin(yaw) * std::cos(pitch), nd * std::sin(pitch),
              nd * std::cos(yaw) * std::cos(pitch)};
    return look_at(neye, {0, 0, 0}, {0, 1, 0}, cam.focal, cam.width, cam.height);
}

void validate(const InversionOptions& opt, const InversionInput& in) {
    require(opt.latent_steps >= 0, "inversion: latent_steps must be nonnegative");
    require(opt.finetune_steps >= 0, "inversion: finetune_steps must be nonnegative");
    require(std::isfinite(opt.lr_latent) && opt.lr_latent > 0.f,
            "inversion: lr_latent must be positive");
    require(std::isfinite(opt.lr_finetune) && opt.lr_finetune > 0.f,
            "inversion: lr_finetune must be positive");
    require(opt.lattice >= 4 && opt.lattice % 4 == 0,
            "inversion: lattice must be a positive multiple of 4");
    require(opt.lattice <= in.image.width && opt.lattice <= in.image.height,
            "inversion: lattice exceeds the image extent");
    validate(opt.weights);
}

AvatarCodes mean_init(const LatentTables& tables) {
    return {tables.mean_geom(), tables.mean_color(), tables.mean_expr()};
}

AvatarCodes clone_codes(const AvatarCodes& codes) {
    return {clone_tensor(codes.geom), clone_tensor(codes.color), clone_tensor(codes.expr)};
}

LatentFit optimize_latents(const Model& model, const AvatarCodes& init, const InversionInput& in,
                           const InversionOptions& opt, std::ostream* log) {
    validate(in);
    validate(opt, in);
    LatentFit fit;
    fit.codes = clone_codes(init);
    Tensor cam_param({1, 3}, {0.f, 0.f, 0.f});
    AdamState cam_opt;
    for (int64_t step = 0; step < opt.latent_steps; ++step) {
        if (opt.refine_camera)
            refine_camera_step(model, fit.codes, in, cam_param, cam_opt, opt, step);
        Camera cam = orbit_camera(in.camera, adjust_of(cam_param));

        ad::Tape tape;
        AvatarCodes bc{tape.leaf(fit.codes.geom), tape.leaf(fit.codes.color),
                       tape.leaf(fit.codes.expr)};
        LossAccum acc;
        TermCtx ctx{model, bc, model, fit.codes};
        add_terms(acc, ctx, in, cam, opt, 0x1a77, step, /*with_silhouette=*/true);
        abort_if_nonfinite(acc.report, "inversion", step);

        bool moved = false;
        if (acc.total.defined()) {
            ad::Gradients grads = tape.backward(acc.total);
            Tensor gg = grads.at(bc.geom), gc = grads.at(bc.color), ge = grads.at(bc.expr);
            if (finite_tensor(gg) && finite_tensor(gc) && finite_tensor(ge)) {
                const std::pair<Tensor*, Tensor*> rows[3] = {
                    {&fit.codes.geom, &gg}, {&fit.codes.color, &gc}, {&fit.codes.expr, &ge}};
                // clip the joint gradient to unit norm so one bad ray cannot
                // throw the codes; small gradients pass through untouched
                double n2 = 0.0;
                for (auto& [param, grad] : rows)
                    for (float v : grad->data()) n2 += double(v) * double(v);
                float lr = cosine_lr(opt.lr_latent, step, opt.latent_steps);
                if (n2 > 1.0) lr = float(double(lr) / std::sqrt(n2));
                for (auto& [param, grad] : rows) {
                    auto p = param->mutable_data();
                    auto g = grad->data();
                    for (size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
                }
                moved = true;
            }
        }
        if (log) {
            *log << acc.report.log_line(step);
            if (!moved) *log << " skipped=non_finite_grads";
            *log << '\n';
        }
        fit.history.push_back(acc.report);
    }
    fit.camera = adjust_of(cam_param);
    return fit;
}

FinetuneFit finetune_weights(const Model& model, const AvatarCodes& codes,
                             const InversionInput& in, const InversionOptions& opt,
                             const CameraAdjust& adj, std::ostream* log) {
    validate(in);
    validate(opt, in);
    FinetuneFit fit;
    fit.model = clone_model(model);
    Camera cam = orbit_camera(in.camera, adj);
    AdamState state;
    for (int64_t step = 0; step < opt.finetune_steps; ++step) {
        ad::Tape tape;
        Model bm = fit.model.bind(tape);
        LossAccum acc;
        TermCtx ctx{bm, codes, fit.model, codes};
        add_terms(acc, ctx, in, cam, opt, 0xf17e, step, /*with_silhouette=*/false);
        abort_if_nonfinite(acc.report, "fine-tuning", step);

        bool applied = false;
        if (acc.total.defined()) {
            ad::Gradients grads = tape.backward(acc.total);
            auto target = fit.model.params();
            auto bound = bm.params();
            std::vector<ParamUpdate> ups;
            ups.reserve(target.size());
            for (size_t i = 0; i < target.size(); ++i)
                ups.push_back({target[i].first, target[i].second, grads.at(*bound[i].second),
                               opt.lr_finetune});
            applied = adam_step(ups, state);
        }
        if (log) {
            *log << acc.report.log_line(step);
            if (!applied) *log << " skipped=non_finite_grads";
            *log << '\n';
        }
        fit.history.push_back(acc.report);
    }
    return fit;
}

InversionResult invert(const Model& model, const LatentTables& tables, const InversionInput& in,
                       const InversionOptions& opt, std::ostream* log) {
    validate(in);
    validate(opt, in);
    InversionResult res;
    LatentFit lf = optimize_latents(model, mean_init(tables), in, opt, log);
    res.codes = lf.codes;
    res.camera = lf.camera;
    res.latent_history = std::move(lf.history);
    if (opt.skip_finetune) {
        res.model = clone_model(model);
        res.finetuned = false;
    } else {
        FinetuneFit ff = finetune_weights(model, res.codes, in, opt, res.camera, log);
        res.model = std::move(ff.model);
        res.finetune_history = std::move(ff.history);
        res.finetuned = true;
    }
    res.final_view = render_image(res.model, res.codes, orbit_camera(in.camera, res.camera));
    return res;
}

}  // namespace morphsdf
