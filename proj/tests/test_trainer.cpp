#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "networks/checkpoint.hpp"
#include "oracle_util.hpp"
#include "synthdata/dataset.hpp"
#include "trainer/trainer.hpp"

using namespace morphsdf;
using ad::Tensor;

namespace {

ModelConfig small_model() {
    ModelConfig cfg;
    cfg.latent_dim = 16;
    cfg.f_hidden = 32;
    cfg.f_layers = 3;
    cfg.g_hidden = 24;
    cfg.g_layers = 3;
    cfg.ginv_hidden = 24;
    cfg.ginv_layers = 3;
    cfg.h_hidden = 24;
    cfg.h_layers = 3;
    return cfg;
}

// Exact sphere of radius 0.7 (zero harmonics -> unit Lipschitz, field
// |p| - 0.7): the cleanest ground truth a training run can chase.
TrainSample sphere_sample(int n_surface, uint64_t point_seed, int views, int image_size) {
    SubjectSpec spec;
    spec.r0 = 0.7f;
    spec.sh = {};
    spec.texture_seed = 9;
    TrainSample smp;
    smp.subject = 0;
    smp.expression = 0;
    smp.subject_spec = spec;
    smp.expression_spec = {};
    smp.shape = make_shape(spec, {});
    smp.marks = landmarks(smp.shape);
    for (const Landmark& m : smp.marks)
        smp.surface.push_back({m.p, normalized(m.p), m.uv});
    Rng rng(point_seed);
    while (int(smp.surface.size()) < n_surface) {
        float c = rng.uniform(-1.f, 1.f);
        float a = rng.uniform(0.f, 6.2831853f);
        float s = std::sqrt(std::max(0.f, 1.f - c * c));
        Vec3 dir{s * std::cos(a), s * std::sin(a), c};
        Vec3 p = dir * 0.7f;
        smp.surface.push_back({p, dir, gt_uv(p)});
    }
    smp.texture_params = draw_texture_params(spec.texture_seed);
    smp.texture = bake_texture(smp.texture_params, 32);
    for (int v = 0; v < views; ++v)
        smp.views.push_back(render_gt(smp.shape, smp.texture, dataset_camera(v, image_size)));
    return smp;
}

Dataset sphere_dataset(int n_surface, int views = 0, int image_size = 16) {
    Dataset ds;
    ds.cfg.subjects = 1;
    ds.cfg.expressions = 1;
    ds.cfg.views = views;
    ds.cfg.surface_samples = n_surface;
    ds.cfg.image_size = image_size;
    ds.cfg.texture_size = 32;
    ds.cfg.seed = 7;
    ds.samples.push_back(sphere_sample(n_surface, 33, views, image_size));
    return ds;
}

TrainConfig sphere_config(int steps) {
    TrainConfig cfg;
    cfg.stage = 1;
    cfg.step_limit = steps;
    cfg.batch_size = 1;
    cfg.surface_points = 64;
    cfg.eikonal_points = 128;
    cfg.lr_networks = 2e-3f;
    cfg.lr_latents = 2e-3f;
    cfg.seed = 5;
    cfg.model = small_model();
    return cfg;
}

using Snapshot = std::map<std::string, std::vector<float>>;

Snapshot snapshot(Model& m, const LatentTables& t) {
    Snapshot s;
    for (auto& [name, p] : m.params()) {
        auto d = p->data();
        s[name].assign(d.begin(), d.end());
    }
    auto rows = [&](const char* prefix, const std::vector<Tensor>& v) {
        for (size_t i = 0; i < v.size(); ++i) {
            auto d = v[i].data();
            s[std::string(prefix) + std::to_string(i)].assign(d.begin(), d.end());
        }
    };
    rows("latent.geom.", t.geom);
    rows("latent.color.", t.color);
    rows("latent.expr.", t.expr);
    return s;
}

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

float median_of(std::vector<float> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST_CASE("adam optimizer contract") {
    SUBCASE("zero gradients leave fresh parameters untouched") {
        Tensor p({2, 2}, {1.f, -2.f, 3.f, 0.5f});
        std::vector<float> before(p.data().begin(), p.data().end());
        AdamState st;
        std::vector<ParamUpdate> ups{{"w", &p, Tensor::zeros({2, 2}), 0.1f}};
        CHECK(adam_step(ups, st));
        CHECK(st.step == 1);
        std::vector<float> after(p.data().begin(), p.data().end());
        CHECK(bits_equal(before, after));
        for (float m : st.slots.at("w").m.data()) CHECK(m == 0.f);
        for (float v : st.slots.at("w").v.data()) CHECK(v == 0.f);
    }
    SUBCASE("moments decay by exactly beta under zero gradients") {
        Tensor p({1, 2}, {0.f, 0.f});
        AdamState st;
        std::vector<ParamUpdate> first{{"w", &p, Tensor({1, 2}, {0.4f, -0.8f}), 0.01f}};
        REQUIRE(adam_step(first, st));
        std::vector<float> m1(st.slots.at("w").m.data().begin(), st.slots.at("w").m.data().end());
        std::vector<float> v1(st.slots.at("w").v.data().begin(), st.slots.at("w").v.data().end());
        std::vector<ParamUpdate> second{{"w", &p, Tensor::zeros({1, 2}), 0.01f}};
        REQUIRE(adam_step(second, st));
        auto m2 = st.slots.at("w").m.data();
        auto v2 = st.slots.at("w").v.data();
        for (size_t i = 0; i < m1.size(); ++i) {
            CHECK(m2[i] == doctest::Approx(0.9f * m1[i]).epsilon(1e-6));
            CHECK(v2[i] == doctest::Approx(0.999f * v1[i]).epsilon(1e-6));
        }
    }
    SUBCASE("1-D quadratic converges") {
        Tensor x({1, 1}, {0.f});
        AdamState st;
        for (int i = 0; i < 200; ++i) {
            float g = 2.f * (x.value() - 3.f);
            std::vector<ParamUpdate> ups{{"x", &x, Tensor({1, 1}, {g}), 0.1f}};
            REQUIRE(adam_step(ups, st));
        }
        CHECK(std::fabs(x.value() - 3.f) < 1e-2f);
    }
    SUBCASE("identical gradients produce identical updates") {
        Tensor a({1, 3}, {0.2f, -0.7f, 1.1f});
        Tensor b({1, 3}, {0.2f, -0.7f, 1.1f});
        AdamState st;
        Rng rng(3);
        for (int i = 0; i < 5; ++i) {
            std::vector<float> g(3);
            for (float& v : g) v = rng.normal();
            std::vector<ParamUpdate> ups{{"a", &a, Tensor({1, 3}, std::vector<float>(g)), 0.05f},
                                         {"b", &b, Tensor({1, 3}, std::vector<float>(g)), 0.05f}};
            REQUIRE(adam_step(ups, st));
        }
        auto av = a.data(), bv = b.data();
        for (size_t i = 0; i < av.size(); ++i) CHECK(av[i] == bv[i]);
    }
    SUBCASE("two steps match a double-precision reference") {
        const float lr = 0.03f;
        std::vector<float> p0 = {0.5f, -1.2f, 2.0f, 0.f};
        std::vector<float> g1 = {0.3f, -0.1f, 0.8f, -0.4f};
        std::vector<float> g2 = {-0.2f, 0.5f, 0.1f, 0.9f};
        Tensor p({1, 4}, std::vector<float>(p0));
        AdamState st;
        std::vector<ParamUpdate> u1{{"p", &p, Tensor({1, 4}, std::vector<float>(g1)), lr}};
        REQUIRE(adam_step(u1, st));
        std::vector<ParamUpdate> u2{{"p", &p, Tensor({1, 4}, std::vector<float>(g2)), lr}};
        REQUIRE(adam_step(u2, st));

        std::vector<double> want(p0.begin(), p0.end());
        std::vector<double> m(4, 0.0), v(4, 0.0);
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const std::vector<std::vector<float>*> gs = {&g1, &g2};
        for (int t = 1; t <= 2; ++t) {
            for (size_t i = 0; i < 4; ++i) {
                double g = double((*gs[size_t(t - 1)])[i]);
                m[i] = b1 * m[i] + (1 - b1) * g;
                v[i] = b2 * v[i] + (1 - b2) * g * g;
                double mh = m[i] / (1 - std::pow(b1, t));
                double vh = v[i] / (1 - std::pow(b2, t));
                want[i] -= double(lr) * mh / (std::sqrt(vh) + eps);
            }
        }
        CHECK(testutil::max_rel_err(p.data(), want) < 1e-5);
    }
    SUBCASE("non-finite gradients skip the whole step") {
        Tensor a({1, 2}, {1.f, 2.f});
        Tensor b({1, 2}, {3.f, 4.f});
        std::vector<float> a0(a.data().begin(), a.data().end());
        std::vector<float> b0(b.data().begin(), b.data().end());
        AdamState st;
        std::vector<ParamUpdate> ups{
            {"a", &a, Tensor({1, 2}, {0.1f, 0.2f}), 0.1f},
            {"b", &b, Tensor({1, 2}, {std::numeric_limits<float>::quiet_NaN(), 0.f}), 0.1f}};
        CHECK(!adam_step(ups, st));
        CHECK(st.skipped == 1);
        CHECK(st.step == 0);
        CHECK(st.slots.empty());  // nothing allocated, nothing decayed
        CHECK(bits_equal(a0, std::vector<float>(a.data().begin(), a.data().end())));
        CHECK(bits_equal(b0, std::vector<float>(b.data().begin(), b.data().end())));
        // a later finite step proceeds normally
        std::vector<ParamUpdate> ok{{"a", &a, Tensor({1, 2}, {0.1f, 0.2f}), 0.1f}};
        CHECK(adam_step(ok, st));
        CHECK(st.step == 1);
    }
    SUBCASE("bad inputs are rejected") {
        Tensor p({1, 2}, {1.f, 2.f});
        AdamState st;
        std::vector<ParamUpdate> wrong_shape{{"p", &p, Tensor::zeros({2, 2}), 0.1f}};
        CHECK_THROWS_AS(adam_step(wrong_shape, st), std::invalid_argument);
        std::vector<ParamUpdate> dup{{"p", &p, Tensor::zeros({1, 2}), 0.1f},
                                     {"p", &p, Tensor::zeros({1, 2}), 0.1f}};
        CHECK_THROWS_AS(adam_step(dup, st), std::invalid_argument);
        std::vector<ParamUpdate> bad_lr{
            {"p", &p, Tensor::zeros({1, 2}), -0.1f}};
        CHECK_THROWS_AS(adam_step(bad_lr, st), std::invalid_argument);
    }
}

TEST_CASE("batch sampling covers every sample once per epoch") {
    DatasetConfig dc;
    dc.subjects = 2;
    dc.expressions = 2;
    dc.views = 1;
    dc.surface_samples = 48;
    dc.image_size = 16;
    dc.texture_size = 16;
    dc.seed = 3;
    Dataset ds = make_dataset(dc);
    REQUIRE(ds.samples.size() == 4);

    TrainConfig cfg;
    cfg.stage = 1;
    cfg.epochs = 2;
    cfg.step_limit = 0;
    cfg.batch_size = 3;
    cfg.surface_points = 32;
    cfg.eikonal_points = 32;
    cfg.seed = 11;
    cfg.model = small_model();
    validate(cfg, ds);

    CHECK(steps_per_epoch(ds, cfg) == 2);
    CHECK(total_steps(ds, cfg) == 4);

    SUBCASE("epoch coverage is exact") {
        for (int epoch = 0; epoch < 2; ++epoch) {
            std::vector<int> seen;
            for (int s = 0; s < 2; ++s) {
                Batch b = sample_batch(ds, cfg, epoch * 2 + s);
                CHECK(b.epoch == epoch);
                for (const BatchItem& it : b.items) seen.push_back(it.sample);
            }
            std::sort(seen.begin(), seen.end());
            CHECK(seen == std::vector<int>{0, 1, 2, 3});
        }
        Batch first = sample_batch(ds, cfg, 0);
        CHECK(first.items.size() == 3);  // batch size
        Batch second = sample_batch(ds, cfg, 1);
        CHECK(second.items.size() == 1);  // epoch remainder
    }
    SUBCASE("same step twice gives the same batch") {
        Batch a = sample_batch(ds, cfg, 1);
        Batch b = sample_batch(ds, cfg, 1);
        REQUIRE(a.items.size() == b.items.size());
        for (size_t i = 0; i < a.items.size(); ++i) {
            CHECK(a.items[i].sample == b.items[i].sample);
            CHECK(a.items[i].surface_rows == b.items[i].surface_rows);
            CHECK(a.items[i].eikonal_rows == b.items[i].eikonal_rows);
        }
    }
    SUBCASE("subset sizes match the config") {
        Batch b = sample_batch(ds, cfg, 0);
        for (const BatchItem& it : b.items) {
            CHECK(it.surface_rows.size() == 32);
            CHECK(it.eikonal_rows.size() == 16);  // half of eikonal_points
            std::vector<int> uniq = it.surface_rows;
            std::sort(uniq.begin(), uniq.end());
            CHECK(std::adjacent_find(uniq.begin(), uniq.end()) == uniq.end());
            for (int r : it.surface_rows) CHECK(r < 48);
        }
    }
    SUBCASE("stage-2 batches carry a strided ray lattice") {
        TrainConfig c2 = cfg;
        c2.stage = 2;
        c2.lattice = 8;
        c2.rays_per_view = 40;
        validate(c2, ds);
        Batch b = sample_batch(ds, c2, 0);
        for (const BatchItem& it : b.items) {
            REQUIRE(it.lattice_px.size() == 40);
            REQUIRE(it.view_px.size() == 40);
            CHECK(it.view >= 0);
            CHECK(it.view < 1);
            // all rays share the stride-2 offsets of this step
            int ox = -1, oy = -1;
            for (size_t k = 0; k < it.view_px.size(); ++k) {
                int cell = it.lattice_px[k];
                CHECK(cell >= 0);
                CHECK(cell < 64);
                int px = it.view_px[k], x = px % 16, y = px / 16;
                if (ox < 0) {
                    ox = x % 2;
                    oy = y % 2;
                }
                CHECK(x % 2 == ox);
                CHECK(y % 2 == oy);
                CHECK(x / 2 == cell % 8);
                CHECK(y / 2 == cell / 8);
            }
            std::vector<int> uniq = it.lattice_px;
            std::sort(uniq.begin(), uniq.end());
            CHECK(std::adjacent_find(uniq.begin(), uniq.end()) == uniq.end());
        }
    }
    SUBCASE("config validation rejects bad shapes") {
        TrainConfig bad = cfg;
        bad.stage = 3;
        CHECK_THROWS_AS(validate(bad, ds), std::invalid_argument);
        bad = cfg;
        bad.eikonal_points = 31;
        CHECK_THROWS_AS(validate(bad, ds), std::invalid_argument);
        bad = cfg;
        bad.surface_points = 1000;  // more than the samples carry
        CHECK_THROWS_AS(validate(bad, ds), std::invalid_argument);
        bad = cfg;
        bad.stage = 2;
        bad.lattice = 6;  // not a multiple of 4
        CHECK_THROWS_AS(validate(bad, ds), std::invalid_argument);
        bad = cfg;
        bad.stage = 2;
        bad.lattice = 8;
        bad.rays_per_view = 100;  // exceeds the lattice
        CHECK_THROWS_AS(validate(bad, ds), std::invalid_argument);
        Dataset empty;
        empty.cfg = dc;
        CHECK_THROWS_AS(validate(cfg, empty), std::invalid_argument);
    }
}

TEST_CASE("stage-1 training fits the sphere") {
    Dataset ds = sphere_dataset(256);
    TrainConfig cfg = sphere_config(300);
    std::ostringstream log;
    TrainResult run = train_stage1(ds, cfg, &log);
    REQUIRE(run.history.size() == 300);
    CHECK(run.state.stage == 1);
    CHECK(run.state.step == 300);

    SUBCASE("held-out surface points sit on the learned zero set") {
        TrainSample held_out = sphere_sample(256, 777, 0, 16);
        std::vector<float> pts;
        for (const SurfaceSample& s : held_out.surface)
            pts.insert(pts.end(), {s.p.x, s.p.y, s.p.z});
        Tensor X({int(held_out.surface.size()), 3}, std::move(pts));
        AvatarCodes codes = run.state.tables.codes_for_sample(0);
        float err = surface_loss(run.state.model, X, codes).value();
        CHECK(err < 0.01f);
    }
    SUBCASE("loss medians over 50-step blocks do not increase") {
        std::vector<float> totals;
        for (const LossReport& r : run.history) totals.push_back(r.total);
        std::vector<float> medians;
        for (size_t lo = 0; lo + 50 <= totals.size(); lo += 50)
            medians.push_back(
                median_of(std::vector<float>(totals.begin() + lo, totals.begin() + lo + 50)));
        REQUIRE(medians.size() == 6);
        for (size_t i = 1; i < medians.size(); ++i) CHECK(medians[i] <= medians[i - 1] + 1e-5f);
    }
    SUBCASE("log lines carry every term") {
        std::string line;
        std::istringstream is(log.str());
        REQUIRE(std::getline(is, line));
        CHECK(line.rfind("step=0 ", 0) == 0);
        for (const char* term :
             {"surface=", "eikonal=", "normal=", "uv=", "tex=", "landmark=", "reg=", "total="})
            CHECK(line.find(term) != std::string::npos);
    }
    SUBCASE("same config and seed reproduce the run bit-for-bit") {
        TrainResult again = train_stage1(ds, cfg, nullptr);
        Snapshot a = snapshot(run.state.model, run.state.tables);
        Snapshot b = snapshot(again.state.model, again.state.tables);
        REQUIRE(a.size() == b.size());
        for (auto& [name, va] : a) CHECK(bits_equal(va, b.at(name)));
        REQUIRE(again.history.size() == run.history.size());
        for (size_t i = 0; i < run.history.size(); ++i)
            CHECK(run.history[i].total == again.history[i].total);
        for (auto& [name, slot] : run.state.opt.slots) {
            auto& other = again.state.opt.slots.at(name);
            CHECK(bits_equal(std::vector<float>(slot.m.data().begin(), slot.m.data().end()),
                             std::vector<float>(other.m.data().begin(), other.m.data().end())));
        }
    }
}

TEST_CASE("stage-1 updates only the latents present in the batch") {
    DatasetConfig dc;
    dc.subjects = 2;
    dc.expressions = 2;
    dc.views = 1;
    dc.surface_samples = 48;
    dc.image_size = 16;
    dc.texture_size = 16;
    dc.seed = 3;
    Dataset ds = make_dataset(dc);

    TrainConfig cfg;
    cfg.stage = 1;
    cfg.step_limit = 1;
    cfg.batch_size = 1;
    cfg.surface_points = 32;
    cfg.eikonal_points = 32;
    cfg.seed = 21;
    cfg.model = small_model();

    // the same init the trainer builds internally
    LatentTables init = LatentTables::make(dc.subjects, ds.subject_of_sample(),
                                           cfg.model.latent_dim, cfg.seed);
    Batch first = sample_batch(ds, cfg, 0);
    REQUIRE(first.items.size() == 1);
    int visited = first.items[0].sample;
    int visited_subject = ds.samples[size_t(visited)].subject;

    TrainResult run = train_stage1(ds, cfg, nullptr);
    REQUIRE(run.state.tables.geom.size() == 2);   // per subject
    REQUIRE(run.state.tables.expr.size() == 4);   // per sample
    auto changed = [](const Tensor& now, const Tensor& was) {
        auto a = now.data(), b = was.data();
        return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0;
    };
    for (int subj = 0; subj < 2; ++subj) {
        CHECK(changed(run.state.tables.geom[size_t(subj)], init.geom[size_t(subj)]) ==
              (subj == visited_subject));
        CHECK(changed(run.state.tables.color[size_t(subj)], init.color[size_t(subj)]) ==
              (subj == visited_subject));
    }
    for (int smp = 0; smp < 4; ++smp)
        CHECK(changed(run.state.tables.expr[size_t(smp)], init.expr[size_t(smp)]) ==
              (smp == visited));
    // and the optimizer allocated moments only for those rows
    CHECK(run.state.opt.slots.count("latent.expr." + std::to_string(visited)) == 1);
    for (int smp = 0; smp < 4; ++smp)
        if (smp != visited)
            CHECK(run.state.opt.slots.count("latent.expr." + std::to_string(smp)) == 0);
}

TEST_CASE("non-finite losses abort with the term named") {
    Dataset ds = sphere_dataset(64);
    ds.samples[0].surface[10].n.x = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg = sphere_config(5);
    cfg.surface_points = 64;  // make sure the poisoned row is always visited
    CHECK_THROWS_WITH_AS(train_stage1(ds, cfg, nullptr),
                         doctest::Contains("non-finite loss term 'normal'"), std::runtime_error);
}

TEST_CASE("trainer state round trips through disk") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "morphsdf_trainer_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    Dataset ds = sphere_dataset(64);
    TrainConfig cfg = sphere_config(10);
    cfg.surface_points = 48;
    cfg.checkpoint_every = 5;
    cfg.checkpoint_dir = dir.string();
    TrainResult run = train_stage1(ds, cfg, nullptr);

    SUBCASE("cadenced snapshots exist and the last one equals the final state") {
        CHECK(fs::exists(dir / "ckpt_step5.msdf"));
        REQUIRE(fs::exists(dir / "ckpt_step10.msdf"));
        TrainState last = load_train_state((dir / "ckpt_step10.msdf").string());
        CHECK(last.step == 10);
        CHECK(last.stage == 1);
        Snapshot a = snapshot(run.state.model, run.state.tables);
        Snapshot b = snapshot(last.model, last.tables);
        for (auto& [name, va] : a) CHECK(bits_equal(va, b.at(name)));
    }
    SUBCASE("loading then saving is bit-identical") {
        fs::path p1 = dir / "state_a.msdf", p2 = dir / "state_b.msdf";
        save_train_state(p1.string(), run.state);
        TrainState loaded = load_train_state(p1.string());
        CHECK(loaded.step == run.state.step);
        CHECK(loaded.opt.step == run.state.opt.step);
        CHECK(loaded.opt.skipped == run.state.opt.skipped);
        CHECK(loaded.config.lr_networks == run.state.config.lr_networks);
        CHECK(loaded.config.seed == run.state.config.seed);
        CHECK(loaded.config.weights.eikonal == run.state.config.weights.eikonal);
        save_train_state(p2.string(), loaded);
        CHECK(read_bytes(p1.string()) == read_bytes(p2.string()));
    }
    SUBCASE("the model checkpoint loader reads a trainer state file") {
        fs::path p = dir / "state_c.msdf";
        save_train_state(p.string(), run.state);
        Checkpoint ck = load_checkpoint(p.string());
        CHECK(ck.stage == 1);
        Snapshot a = snapshot(run.state.model, run.state.tables);
        Snapshot b = snapshot(ck.model, ck.tables);
        for (auto& [name, va] : a) CHECK(bits_equal(va, b.at(name)));
    }
    SUBCASE("a plain model checkpoint is not a trainer state") {
        fs::path p = dir / "plain.msdf";
        save_checkpoint(p.string(), run.state.model, run.state.tables, 1);
        CHECK_THROWS_AS(load_train_state(p.string()), std::runtime_error);
    }
    fs::remove_all(dir);
}

TEST_CASE("deep copies detach parameter storage") {
    Model m = Model::make(small_model(), 17);
    Model c = clone_model(m);
    float before = c.f.b[0].data()[0];
    m.f.b[0].mutable_data()[0] = before + 42.f;
    CHECK(c.f.b[0].data()[0] == before);

    LatentTables t = LatentTables::make(2, {0, 0, 1}, 16, 4);
    LatentTables tc = clone_tables(t);
    float b0 = tc.expr[2].data()[0];
    t.expr[2].mutable_data()[0] = b0 + 1.f;
    CHECK(tc.expr[2].data()[0] == b0);
    CHECK(tc.expr_subject == t.expr_subject);
}

TEST_CASE("stage-2 training freezes the uv networks and improves the render") {
    Dataset ds = sphere_dataset(256, 2, 16);
    TrainConfig cfg1 = sphere_config(150);
    // leave the color network untrained so the image terms carry real signal
    cfg1.weights.tex = 0.f;
    TrainResult stage1 = train_stage1(ds, cfg1, nullptr);

    TrainConfig cfg2 = cfg1;
    cfg2.stage = 2;
    cfg2.step_limit = 40;
    cfg2.lattice = 8;
    cfg2.rays_per_view = 64;
    std::ostringstream log;
    AvatarCodes codes_before = stage1.state.tables.codes_for_sample(0);
    float l2_before = masked_image_l2(stage1.state.model, codes_before, ds.samples[0].views[0]);

    TrainResult stage2 = train_stage2(stage1.state, ds, cfg2, &log);
    CHECK(stage2.state.stage == 2);
    REQUIRE(stage2.history.size() == 40);

    SUBCASE("g and g-inverse parameters are bit-identical") {
        Snapshot before = snapshot(stage1.state.model, stage1.state.tables);
        Snapshot after = snapshot(stage2.state.model, stage2.state.tables);
        int frozen = 0, moved = 0;
        for (auto& [name, va] : before) {
            if (name.rfind("g.", 0) == 0 || name.rfind("ginv.", 0) == 0) {
                CHECK(bits_equal(va, after.at(name)));
                ++frozen;
            } else if (name.rfind("f.", 0) == 0) {
                moved += !bits_equal(va, after.at(name));
            }
        }
        CHECK(frozen > 0);
        CHECK(moved > 0);  // the field did train
        for (auto& [name, slot] : stage2.state.opt.slots) {
            CHECK(name.rfind("g.", 0) != 0);
            CHECK(name.rfind("ginv.", 0) != 0);
        }
    }
    SUBCASE("masked image error decreases from its stage-1 value") {
        AvatarCodes codes_after = stage2.state.tables.codes_for_sample(0);
        float l2_after = masked_image_l2(stage2.state.model, codes_after, ds.samples[0].views[0]);
        CHECK(l2_after < 0.9f * l2_before);
    }
    SUBCASE("image terms appear in the stage-2 log") {
        std::string line;
        std::istringstream is(log.str());
        REQUIRE(std::getline(is, line));
        for (const char* term : {"img_l2=", "img_percep=", "silhouette="})
            CHECK(line.find(term) != std::string::npos);
        CHECK(line.find("tex=") == std::string::npos);
    }
    SUBCASE("rendering from the stage-2 state is deterministic") {
        AvatarCodes codes_after = stage2.state.tables.codes_for_sample(0);
        RenderResult r1 = render_image(stage2.state.model, codes_after, ds.samples[0].views[0].camera);
        RenderResult r2 = render_image(stage2.state.model, codes_after, ds.samples[0].views[0].camera);
        CHECK(std::memcmp(r1.image.pixels.data(), r2.image.pixels.data(),
                          r1.image.pixels.size() * sizeof(float)) == 0);
        CHECK(std::memcmp(r1.depth.pixels.data(), r2.depth.pixels.data(),
                          r1.depth.pixels.size() * sizeof(float)) == 0);
    }
    SUBCASE("stage-2 requires a stage-1 state") {
        CHECK_THROWS_AS(train_stage2(stage2.state, ds, cfg2, nullptr), std::invalid_argument);
    }
}
