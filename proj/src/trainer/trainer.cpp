#include "trainer/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

#include "networks/blockio.hpp"
#include "renderer/render.hpp"

namespace morphsdf {

using ad::Tensor;
using nlohmann::json;

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("trainer: " + msg);
}

float weight_of(const LossWeights& w, const std::string& name) {
    if (name == "surface") return w.surface;
    if (name == "eikonal") return w.eikonal;
    if (name == "normal") return w.normal;
    if (name == "uv") return w.uv;
    if (name == "tex") return w.tex;
    if (name == "landmark") return w.landmark;
    if (name == "reg") return w.reg;
    if (name == "img_l2") return w.img_l2;
    if (name == "img_percep") return w.img_percep;
    if (name == "silhouette") return w.silhouette;
    throw std::logic_error("trainer: unknown loss term " + name);
}

Tensor surface_points_of(const TrainSample& smp, const std::vector<int>& rows) {
    std::vector<float> d;
    d.reserve(rows.size() * 3);
    for (int r : rows) {
        const Vec3& p = smp.surface[size_t(r)].p;
        d.insert(d.end(), {p.x, p.y, p.z});
    }
    return Tensor({int(rows.size()), 3}, std::move(d));
}

Tensor surface_normals_of(const TrainSample& smp, const std::vector<int>& rows) {
    std::vector<float> d;
    d.reserve(rows.size() * 3);
    for (int r : rows) {
        const Vec3& n = smp.surface[size_t(r)].n;
        d.insert(d.end(), {n.x, n.y, n.z});
    }
    return Tensor({int(rows.size()), 3}, std::move(d));
}

Tensor texture_rows_of(const TrainSample& smp, const std::vector<int>& rows) {
    std::vector<float> d;
    d.reserve(rows.size() * 3);
    for (int r : rows) {
        const Vec2& uv = smp.surface[size_t(r)].uv;
        Vec3 c = eval_texture(smp.texture_params, uv.x, uv.y);
        d.insert(d.end(), {c.x, c.y, c.z});
    }
    return Tensor({int(rows.size()), 3}, std::move(d));
}

Tensor mark_points(const TrainSample& smp) {
    std::vector<float> d;
    for (const Landmark& m : smp.marks) d.insert(d.end(), {m.p.x, m.p.y, m.p.z});
    return Tensor({int(smp.marks.size()), 3}, std::move(d));
}

Tensor mark_uv(const TrainSample& smp) {
    std::vector<float> d;
    for (const Landmark& m : smp.marks) d.insert(d.end(), {m.uv.x, m.uv.y});
    return Tensor({int(smp.marks.size()), 2}, std::move(d));
}

// Per-term tensors collected across the batch, merged into means at the end.
struct TermBag {
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<Tensor>> parts;
    void add(const std::string& name, const Tensor& t) {
        if (!parts.count(name)) order.push_back(name);
        parts[name].push_back(t);
    }
};

void add_image_terms(TermBag& bag, TrainState& st, const Model& bm, const AvatarCodes& bc,
                     const TrainSample& smp, const BatchItem& it) {
    const View& view = smp.views[size_t(it.view)];
    std::vector<Ray> all = generate_rays(view.camera);
    std::vector<Ray> rays;
    rays.reserve(it.view_px.size());
    for (int px : it.view_px) rays.push_back(all[size_t(px)]);

    // march on the current field without recording, then make the converged
    // hits differentiable through the implicit correction
    AvatarCodes plain = st.tables.codes_for_sample(it.sample);
    std::vector<TraceResult> traces = sphere_trace(rays, model_field(st.model, plain));

    std::vector<Vec3> hit_points, dirs;
    std::vector<int> hit_rows;
    for (size_t i = 0; i < traces.size(); ++i)
        if (traces[i].converged) {
            hit_points.push_back(traces[i].point);
            dirs.push_back(rays[i].dir);
            hit_rows.push_back(int(i));
        }

    if (!hit_points.empty()) {
        DiffHits dh = differentiable_hit_batch(bm, bc, hit_points, dirs);
        if (!dh.kept.empty()) {
            Tensor rows = bm.color(bm.uv(dh.points, bc), bc);
            std::vector<float> gt;
            std::vector<int> lat_px;
            for (int k : dh.kept) {
                int ray_row = hit_rows[size_t(k)];
                int vp = it.view_px[size_t(ray_row)];
                for (int c = 0; c < 3; ++c)
                    gt.push_back(view.image.pixels[size_t(vp) * 3 + size_t(c)]);
                lat_px.push_back(it.lattice_px[size_t(ray_row)]);
            }
            Tensor gt_rows({int(dh.kept.size()), 3}, std::move(gt));
            bag.add("img_l2", image_l2_loss(rows, gt_rows));
            int lat = st.config.lattice;
            bag.add("img_percep", image_perceptual_loss(masked_image(rows, lat_px, lat, lat),
                                                        masked_image(gt_rows, lat_px, lat, lat)));
        }
    }

    Image sub_mask(int(rays.size()), 1, 1);
    for (size_t i = 0; i < rays.size(); ++i)
        sub_mask.pixels[i] = view.mask.pixels[size_t(it.view_px[i])];
    bag.add("silhouette", silhouette_loss(bm, bc, traces, rays, sub_mask));
}

LossReport train_step(TrainState& st, const Dataset& ds, int64_t step, std::ostream* log) {
    const TrainConfig& cfg = st.config;
    Batch batch = sample_batch(ds, cfg, step);

    ad::Tape tape;
    Model bm = st.model.bind(tape);
    std::map<int, Tensor> bgeom, bcolor, bexpr;  // each table row bound once
    for (const BatchItem& it : batch.items) {
        int subj = ds.samples[size_t(it.sample)].subject;
        if (!bgeom.count(subj)) {
            bgeom.emplace(subj, tape.leaf(st.tables.geom[size_t(subj)]));
            bcolor.emplace(subj, tape.leaf(st.tables.color[size_t(subj)]));
        }
        if (!bexpr.count(it.sample))
            bexpr.emplace(it.sample, tape.leaf(st.tables.expr[size_t(it.sample)]));
    }

    TermBag bag;
    for (const BatchItem& it : batch.items) {
        const TrainSample& smp = ds.samples[size_t(it.sample)];
        AvatarCodes bc{bgeom.at(smp.subject), bcolor.at(smp.subject), bexpr.at(it.sample)};
        Rng srng = Rng::fork(cfg.seed, {0xe14, uint64_t(step), uint64_t(it.sample)});

        Tensor X = surface_points_of(smp, it.surface_rows);
        Tensor N = surface_normals_of(smp, it.surface_rows);
        Tensor E = eikonal_sample_points(surface_points_of(smp, it.eikonal_rows), srng);

        bag.add("surface", surface_loss(bm, X, bc));
        bag.add("eikonal", eikonal_loss(bm, E, bc));
        bag.add("normal", normal_loss(bm, X, N, bc));
        bag.add("reg", latent_reg(bc));
        if (st.stage == 1) {
            bag.add("uv", uv_cycle_loss(bm, X, bc));
            bag.add("tex", texture_loss(bm, X, texture_rows_of(smp, it.surface_rows), bc));
            bag.add("landmark", landmark_uv_loss(bm, mark_points(smp), mark_uv(smp), bc));
        } else {
            add_image_terms(bag, st, bm, bc, smp, it);
        }
    }

    static const std::vector<std::string> kStage1 = {"surface", "eikonal", "normal", "uv",
                                                     "tex",     "landmark", "reg"};
    static const std::vector<std::string> kStage2 = {"surface", "eikonal",    "normal",    "reg",
                                                     "img_l2",  "img_percep", "silhouette"};
    LossAccum acc;
    for (const std::string& name : st.stage == 1 ? kStage1 : kStage2) {
        auto found = bag.parts.find(name);
        if (found == bag.parts.end() || found->second.empty()) {
            acc.skip(name);
            continue;
        }
        Tensor sum = found->second[0];
        for (size_t i = 1; i < found->second.size(); ++i) sum = ad::add(sum, found->second[i]);
        acc.add(name, ad::mul_scalar(sum, 1.f / float(found->second.size())),
                weight_of(cfg.weights, name));
    }

    if (!acc.report.finite()) {
        for (const auto& t : acc.report.terms)
            if (!std::isfinite(t.raw) || !std::isfinite(t.weighted))
                throw std::runtime_error("training aborted at step " + std::to_string(step) +
                                         ": non-finite loss term '" + t.name + "'");
        throw std::runtime_error("training aborted at step " + std::to_string(step) +
                                 ": non-finite total loss");
    }

    ad::Gradients grads = tape.backward(acc.total);

    std::vector<ParamUpdate> ups;
    auto bound_params = bm.params();
    auto target_params = st.model.params();
    for (size_t i = 0; i < bound_params.size(); ++i) {
        const std::string& name = target_params[i].first;
        if (st.stage == 2 && (name.rfind("g.", 0) == 0 || name.rfind("ginv.", 0) == 0))
            continue;  // uv networks are frozen after stage 1
        ups.push_back(
            {name, target_params[i].second, grads.at(*bound_params[i].second), cfg.lr_networks});
    }
    for (auto& [subj, t] : bgeom)
        ups.push_back({"latent.geom." + std::to_string(subj), &st.tables.geom[size_t(subj)],
                       grads.at(t), cfg.lr_latents});
    for (auto& [subj, t] : bcolor)
        ups.push_back({"latent.color." + std::to_string(subj), &st.tables.color[size_t(subj)],
                       grads.at(t), cfg.lr_latents});
    for (auto& [smp, t] : bexpr)
        ups.push_back({"latent.expr." + std::to_string(smp), &st.tables.expr[size_t(smp)],
                       grads.at(t), cfg.lr_latents});

    bool applied = adam_step(ups, st.opt);
    if (log) {
        *log << acc.report.log_line(step);
        if (!applied) *log << " skipped=non_finite_grads total_skipped=" << st.opt.skipped;
        *log << '\n';
    }
    return acc.report;
}

TrainResult run(TrainState st, const Dataset& ds, std::ostream* log) {
    TrainResult res;
    int64_t steps = total_steps(ds, st.config);
    for (int64_t s = 0; s < steps; ++s) {
        res.history.push_back(train_step(st, ds, s, log));
        st.step = s + 1;
        if (st.config.checkpoint_every > 0 && st.step % st.config.checkpoint_every == 0)
            save_train_state(st.config.checkpoint_dir + "/ckpt_step" + std::to_string(st.step) +
                                 ".msdf",
                             st);
    }
    res.state = std::move(st);
    return res;
}

json train_config_json(const TrainConfig& c) {
    const LossWeights& w = c.weights;
    json jw{{"surface", w.surface},     {"eikonal", w.eikonal},
            {"normal", w.normal},       {"uv", w.uv},
            {"tex", w.tex},             {"img_l2", w.img_l2},
            {"img_percep", w.img_percep}, {"reg", w.reg},
            {"landmark", w.landmark},   {"silhouette", w.silhouette},
            {"mvc", w.mvc},             {"landmark2d", w.landmark2d}};
    return json{{"stage", c.stage},
                {"epochs", c.epochs},
                {"step_limit", c.step_limit},
                {"batch_size", c.batch_size},
                {"surface_points", c.surface_points},
                {"eikonal_points", c.eikonal_points},
                {"rays_per_view", c.rays_per_view},
                {"lattice", c.lattice},
                {"lr_networks", c.lr_networks},
                {"lr_latents", c.lr_latents},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"seed", c.seed},
                {"weights", jw},
                {"checkpoint_every", c.checkpoint_every},
                {"checkpoint_dir", c.checkpoint_dir}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.stage = j.at("stage");
    c.epochs = j.at("epochs");
    c.step_limit = j.at("step_limit");
    c.batch_size = j.at("batch_size");
    c.surface_points = j.at("surface_points");
    c.eikonal_points = j.at("eikonal_points");
    c.rays_per_view = j.at("rays_per_view");
    c.lattice = j.at("lattice");
    c.lr_networks = j.at("lr_networks");
    c.lr_latents = j.at("lr_latents");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.seed = j.at("seed");
    const json& jw = j.at("weights");
    LossWeights& w = c.weights;
    w.surface = jw.at("surface");
    w.eikonal = jw.at("eikonal");
    w.normal = jw.at("normal");
    w.uv = jw.at("uv");
    w.tex = jw.at("tex");
    w.img_l2 = jw.at("img_l2");
    w.img_percep = jw.at("img_percep");
    w.reg = jw.at("reg");
    w.landmark = jw.at("landmark");
    w.silhouette = jw.at("silhouette");
    w.mvc = jw.at("mvc");
    w.landmark2d = jw.at("landmark2d");
    c.checkpoint_every = j.at("checkpoint_every");
    c.checkpoint_dir = j.at("checkpoint_dir");
    return c;
}

}  // namespace

void validate(const TrainConfig& cfg, const Dataset& ds) {
    require(cfg.stage == 1 || cfg.stage == 2, "stage must be 1 or 2");
    require(cfg.step_limit > 0 || cfg.epochs > 0, "need a positive step_limit or epochs");
    require(cfg.step_limit >= 0 && cfg.epochs >= 0, "negative schedule");
    require(cfg.batch_size > 0, "batch_size must be positive");
    require(cfg.surface_points > 0, "surface_points must be positive");
    require(cfg.eikonal_points > 0 && cfg.eikonal_points % 2 == 0,
            "eikonal_points must be positive and even (half box, half near-surface)");
    require(std::isfinite(cfg.lr_networks) && cfg.lr_networks > 0.f, "bad lr_networks");
    require(std::isfinite(cfg.lr_latents) && cfg.lr_latents > 0.f, "bad lr_latents");
    require(cfg.beta1 >= 0.f && cfg.beta1 < 1.f && cfg.beta2 >= 0.f && cfg.beta2 < 1.f,
            "betas must lie in [0,1)");
    require(cfg.checkpoint_every >= 0, "negative checkpoint cadence");
    require(cfg.checkpoint_every == 0 || !cfg.checkpoint_dir.empty(),
            "checkpoint_every needs checkpoint_dir");
    validate(cfg.weights);
    require(!ds.samples.empty(), "dataset is empty");
    for (const TrainSample& s : ds.samples) {
        require(s.subject >= 0 && s.subject < ds.cfg.subjects,
                "sample subject id outside the dataset's subject count");
        require(int(s.surface.size()) >= cfg.surface_points,
                "sample has fewer surface rows than surface_points");
        require(!s.marks.empty(), "sample has no landmarks");
    }
    if (cfg.stage == 2) {
        require(cfg.lattice > 0 && cfg.lattice % 4 == 0,
                "lattice must be a positive multiple of 4");
        require(cfg.rays_per_view > 0 && cfg.rays_per_view <= cfg.lattice * cfg.lattice,
                "rays_per_view must fit the lattice");
        for (const TrainSample& s : ds.samples) {
            require(!s.views.empty(), "stage 2 needs views");
            for (const View& v : s.views) {
                require(v.camera.width == v.camera.height, "views must be square");
                require(v.camera.width % cfg.lattice == 0, "lattice must divide the view extent");
            }
        }
    }
}

int steps_per_epoch(const Dataset& ds, const TrainConfig& cfg) {
    int n = int(ds.samples.size());
    return (n + cfg.batch_size - 1) / cfg.batch_size;
}

int64_t total_steps(const Dataset& ds, const TrainConfig& cfg) {
    if (cfg.step_limit > 0) return cfg.step_limit;
    return int64_t(cfg.epochs) * int64_t(steps_per_epoch(ds, cfg));
}

Batch sample_batch(const Dataset& ds, const TrainConfig& cfg, int64_t step) {
    int n = int(ds.samples.size());
    int spe = steps_per_epoch(ds, cfg);
    Batch b;
    b.step = step;
    b.epoch = int(step / spe);
    int pos = int(step % spe);

    Rng perm_rng = Rng::fork(cfg.seed, {0xba7c, uint64_t(b.epoch)});
    std::vector<int> perm = perm_rng.permutation(n);

    int lo = pos * cfg.batch_size;
    int hi = std::min(lo + cfg.batch_size, n);
    for (int i = lo; i < hi; ++i) {
        BatchItem it;
        it.sample = perm[size_t(i)];
        const TrainSample& smp = ds.samples[size_t(it.sample)];
        Rng srng = Rng::fork(cfg.seed, {0x57e9, uint64_t(step), uint64_t(it.sample)});

        std::vector<int> sperm = srng.permutation(int(smp.surface.size()));
        it.surface_rows.assign(sperm.begin(), sperm.begin() + cfg.surface_points);
        int base = cfg.eikonal_points / 2;
        it.eikonal_rows.reserve(size_t(base));
        for (int k = 0; k < base; ++k)
            it.eikonal_rows.push_back(srng.uniform_int(int(smp.surface.size())));

        if (cfg.stage == 2) {
            it.view = srng.uniform_int(int(smp.views.size()));
            const Camera& cam = smp.views[size_t(it.view)].camera;
            int stride = cam.width / cfg.lattice;
            int ox = srng.uniform_int(stride), oy = srng.uniform_int(stride);
            std::vector<int> cells = srng.permutation(cfg.lattice * cfg.lattice);
            int take = std::min(cfg.rays_per_view, int(cells.size()));
            it.lattice_px.reserve(size_t(take));
            it.view_px.reserve(size_t(take));
            for (int k = 0; k < take; ++k) {
                int cell = cells[size_t(k)];
                int ly = cell / cfg.lattice, lx = cell % cfg.lattice;
                it.lattice_px.push_back(cell);
                it.view_px.push_back((oy + ly * stride) * cam.width + (ox + lx * stride));
            }
        }
        b.items.push_back(std::move(it));
    }
    return b;
}

Model clone_model(const Model& m) {
    Model c = m;
    for (auto& [name, t] : c.params()) {
        auto d = t->data();
        *t = Tensor(t->shape(), std::vector<float>(d.begin(), d.end()));
    }
    return c;
}

LatentTables clone_tables(const LatentTables& t) {
    LatentTables c = t;
    auto fresh = [](std::vector<Tensor>& rows) {
        for (Tensor& r : rows) {
            auto d = r.data();
            r = Tensor(r.shape(), std::vector<float>(d.begin(), d.end()));
        }
    };
    fresh(c.geom);
    fresh(c.color);
    fresh(c.expr);
    return c;
}

TrainResult train_stage1(const Dataset& ds, const TrainConfig& cfg, std::ostream* log) {
    TrainConfig c = cfg;
    c.stage = 1;
    validate(c, ds);
    TrainState st;
    st.config = c;
    st.stage = 1;
    st.step = 0;
    st.model = Model::make(c.model, c.seed);
    st.tables = LatentTables::make(int(ds.cfg.subjects), ds.subject_of_sample(),
                                   c.model.latent_dim, c.seed);
    st.opt.cfg = {c.beta1, c.beta2, 1e-8f};
    return run(std::move(st), ds, log);
}

TrainResult train_stage2(const TrainState& start, const Dataset& ds, const TrainConfig& cfg,
                         std::ostream* log) {
    if (start.stage != 1)
        throw std::invalid_argument("train_stage2: expected a stage-1 state, got stage " +
                                    std::to_string(start.stage));
    TrainConfig c = cfg;
    c.stage = 2;
    c.model = start.model.cfg;
    validate(c, ds);
    TrainState st;
    st.config = c;
    st.stage = 2;
    st.step = 0;
    st.model = clone_model(start.model);
    st.tables = clone_tables(start.tables);
    st.opt.cfg = {c.beta1, c.beta2, 1e-8f};
    return run(std::move(st), ds, log);
}

void save_train_state(const std::string& path, TrainState& st) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("trainer: cannot open " + path + " for writing");
    os.write("MSDF", 4);
    ckpt::write_u32(os, 2);

    json meta;
    meta["config"] = model_config_json(st.model.cfg);
    meta["stage"] = st.stage;
    meta["num_subjects"] = st.tables.geom.size();
    meta["expr_subject"] = st.tables.expr_subject;
    json tr;
    tr["config"] = train_config_json(st.config);
    tr["step"] = st.step;
    tr["opt"] = json{{"beta1", st.opt.cfg.beta1},
                     {"beta2", st.opt.cfg.beta2},
                     {"eps", st.opt.cfg.eps},
                     {"step", st.opt.step},
                     {"skipped", st.opt.skipped}};
    meta["train"] = tr;
    std::string meta_str = meta.dump();
    ckpt::write_u32(os, uint32_t(meta_str.size()));
    os.write(meta_str.data(), std::streamsize(meta_str.size()));

    auto params = st.model.params();
    std::vector<std::string> slot_names;
    for (const auto& [name, slot] : st.opt.slots) slot_names.push_back(name);
    std::sort(slot_names.begin(), slot_names.end());

    uint32_t num_blocks = uint32_t(params.size() + st.tables.geom.size() +
                                   st.tables.color.size() + st.tables.expr.size() +
                                   2 * slot_names.size());
    ckpt::write_u32(os, num_blocks);
    for (auto& [name, t] : params) ckpt::write_block(os, name, *t);
    for (size_t i = 0; i < st.tables.geom.size(); ++i)
        ckpt::write_block(os, "latent.geom." + std::to_string(i), st.tables.geom[i]);
    for (size_t i = 0; i < st.tables.color.size(); ++i)
        ckpt::write_block(os, "latent.color." + std::to_string(i), st.tables.color[i]);
    for (size_t i = 0; i < st.tables.expr.size(); ++i)
        ckpt::write_block(os, "latent.expr." + std::to_string(i), st.tables.expr[i]);
    for (const std::string& name : slot_names) {
        const AdamSlot& slot = st.opt.slots.at(name);
        ckpt::write_block(os, "opt.m." + name, slot.m);
        ckpt::write_block(os, "opt.v." + name, slot.v);
    }
    if (!os) throw std::runtime_error("trainer: write failed for " + path);
}

TrainState load_train_state(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("trainer: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MSDF")
        throw std::runtime_error("trainer: bad magic in " + path);
    uint32_t version = ckpt::read_u32(is);
    if (version != 2)
        throw std::runtime_error("trainer: " + path + " is not a trainer state (version " +
                                 std::to_string(version) + ")");

    uint32_t meta_len = ckpt::read_u32(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), std::streamsize(meta_len));
    json meta = json::parse(meta_str);
    if (!meta.contains("train"))
        throw std::runtime_error("trainer: missing train section in " + path);

    TrainState st;
    st.stage = meta.at("stage");
    ModelConfig mc = model_config_from_json(meta.at("config"));
    st.model = Model::make(mc, 0);
    int num_subjects = meta.at("num_subjects");
    std::vector<int> expr_subject = meta.at("expr_subject");
    st.tables = LatentTables::make(num_subjects, expr_subject, mc.latent_dim, 0);
    const json& tr = meta.at("train");
    st.config = train_config_from_json(tr.at("config"));
    st.config.model = mc;
    st.step = tr.at("step");
    const json& jo = tr.at("opt");
    st.opt.cfg =
        AdamConfig{jo.at("beta1").get<float>(), jo.at("beta2").get<float>(),
                   jo.at("eps").get<float>()};
    st.opt.step = jo.at("step");
    st.opt.skipped = jo.at("skipped");

    std::unordered_map<std::string, Tensor*> slots;
    for (auto& [name, t] : st.model.params()) slots[name] = t;
    for (size_t i = 0; i < st.tables.geom.size(); ++i)
        slots["latent.geom." + std::to_string(i)] = &st.tables.geom[i];
    for (size_t i = 0; i < st.tables.color.size(); ++i)
        slots["latent.color." + std::to_string(i)] = &st.tables.color[i];
    for (size_t i = 0; i < st.tables.expr.size(); ++i)
        slots["latent.expr." + std::to_string(i)] = &st.tables.expr[i];

    uint32_t num_blocks = ckpt::read_u32(is);
    size_t filled = 0;
    for (uint32_t i = 0; i < num_blocks; ++i) {
        ckpt::Block b = ckpt::read_block(is);
        if (b.name.rfind("opt.m.", 0) == 0) {
            st.opt.slots[b.name.substr(6)].m = b.tensor;
            continue;
        }
        if (b.name.rfind("opt.v.", 0) == 0) {
            st.opt.slots[b.name.substr(6)].v = b.tensor;
            continue;
        }
        auto it = slots.find(b.name);
        if (it == slots.end()) throw std::runtime_error("trainer: unexpected block " + b.name);
        if (!same_shape(*it->second, b.tensor))
            throw std::runtime_error("trainer: shape mismatch for " + b.name);
        *it->second = b.tensor;
        ++filled;
    }
    if (filled != slots.size())
        throw std::runtime_error("trainer: missing parameter blocks in " + path);
    for (const auto& [name, slot] : st.opt.slots)
        if (!slot.m.defined() || !slot.v.defined())
            throw std::runtime_error("trainer: incomplete optimizer moments for " + name);
    return st;
}

float masked_image_l2(const Model& model, const AvatarCodes& codes, const View& view) {
    RenderResult r = render_image(model, codes, view.camera);
    double acc = 0;
    int64_t covered = 0;
    for (size_t i = 0; i < view.mask.count(); ++i) {
        if (view.mask.pixels[i] < 0.5f) continue;
        for (int c = 0; c < 3; ++c) {
            double diff = double(r.image.pixels[i * 3 + size_t(c)]) -
                          double(view.image.pixels[i * 3 + size_t(c)]);
            acc += diff * diff;
        }
        ++covered;
    }
    return covered == 0 ? 0.f : float(acc / (3.0 * double(covered)));
}

}  // namespace morphsdf
