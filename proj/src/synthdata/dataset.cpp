#include "synthdata/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "core/image_io.hpp"

namespace morphsdf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string sample_dir_name(int subject, int expression) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%02d_e%02d", subject, expression);
    return buf;
}

void write_samples_bin(const std::string& path, const std::vector<SurfaceSample>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot write " + path);
    uint32_t n = uint32_t(rows.size());
    f.write(reinterpret_cast<const char*>(&n), 4);
    for (const SurfaceSample& s : rows) {
        float rec[8] = {s.p.x, s.p.y, s.p.z, s.n.x, s.n.y, s.n.z, s.uv.x, s.uv.y};
        f.write(reinterpret_cast<const char*>(rec), sizeof rec);
    }
    if (!f) throw std::runtime_error("dataset: write failed: " + path);
}

std::vector<SurfaceSample> read_samples_bin(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot open " + path);
    uint32_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 4);
    std::vector<SurfaceSample> rows(n);
    for (SurfaceSample& s : rows) {
        float rec[8];
        f.read(reinterpret_cast<char*>(rec), sizeof rec);
        s.p = {rec[0], rec[1], rec[2]};
        s.n = {rec[3], rec[4], rec[5]};
        s.uv = {rec[6], rec[7]};
    }
    if (!f) throw std::runtime_error("dataset: truncated " + path);
    return rows;
}

void write_landmarks_txt(const std::string& path, const std::vector<Landmark>& marks) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("dataset: cannot write " + path);
    f.precision(9);
    for (const Landmark& m : marks)
        f << m.id << ' ' << m.p.x << ' ' << m.p.y << ' ' << m.p.z << ' ' << m.uv.x << ' '
          << m.uv.y << '\n';
}

std::vector<Landmark> read_landmarks_txt(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("dataset: cannot open " + path);
    std::vector<Landmark> marks;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Landmark m;
        if (!(ss >> m.id >> m.p.x >> m.p.y >> m.p.z >> m.uv.x >> m.uv.y))
            throw std::runtime_error("dataset: malformed landmark line in " + path);
        marks.push_back(m);
    }
    return marks;
}

json spec_to_json(const TrainSample& s) {
    json j;
    j["r0"] = s.subject_spec.r0;
    j["sh"] = s.subject_spec.sh;
    j["texture_seed"] = s.subject_spec.texture_seed;
    json bumps = json::array();
    for (const RadialBump& b : s.expression_spec.bumps)
        bumps.push_back({{"center", {b.center.x, b.center.y, b.center.z}},
                         {"amp", b.amp},
                         {"width", b.width}});
    j["bumps"] = bumps;
    j["lipschitz"] = s.shape.lipschitz;
    return j;
}

void spec_from_json(const json& j, TrainSample* s) {
    s->subject_spec.r0 = j.at("r0").get<float>();
    s->subject_spec.sh = j.at("sh").get<std::array<float, 9>>();
    s->subject_spec.texture_seed = j.at("texture_seed").get<uint64_t>();
    s->expression_spec.bumps.clear();
    for (const json& jb : j.at("bumps")) {
        RadialBump b;
        auto c = jb.at("center").get<std::array<float, 3>>();
        b.center = {c[0], c[1], c[2]};
        b.amp = jb.at("amp").get<float>();
        b.width = jb.at("width").get<float>();
        s->expression_spec.bumps.push_back(b);
    }
    s->shape = Shape{s->subject_spec, s->expression_spec, j.at("lipschitz").get<float>()};
}

}  // namespace

const TrainSample& Dataset::at(int subject, int expression) const {
    return samples.at(size_t(subject) * size_t(cfg.expressions) + size_t(expression));
}

std::vector<int> Dataset::subject_of_sample() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const TrainSample& s : samples) out.push_back(s.subject);
    return out;
}

Camera dataset_camera(int view_index, int image_size) {
    static const float yaw_deg[6] = {-30.f, -15.f, 0.f, 15.f, 30.f, 0.f};
    static const float pitch_deg[6] = {0.f, 0.f, 0.f, 0.f, 0.f, 25.f};
    int k = view_index % 6;
    float dist = 2.4f + 0.05f * float(view_index / 6);  // extra cycles step back
    float yaw = yaw_deg[k] * float(kPi) / 180.f;
    float pitch = pitch_deg[k] * float(kPi) / 180.f;
    Vec3 eye{dist * std::sin(yaw) * std::cos(pitch), dist * std::sin(pitch),
             dist * std::cos(yaw) * std::cos(pitch)};
    return look_at(eye, {0, 0, 0}, {0, 1, 0}, 0.8f * float(image_size), image_size, image_size);
}

View render_gt(const Shape& shape, const Image& texture, const Camera& camera) {
    View v;
    v.camera = camera;
    TraceImage ti = trace_camera(analytic_field_batch(shape), camera);
    v.depth = std::move(ti.depth);
    v.mask = std::move(ti.mask);
    v.image = Image(camera.width, camera.height, 3, kBackgroundGray);
    for (size_t i = 0; i < ti.traces.size(); ++i) {
        if (!ti.traces[i].hit) continue;
        Vec2 uv = gt_uv(ti.traces[i].point);
        Vec3 c = sample_bilinear(texture, uv.x, uv.y);
        v.image.pixels[i * 3] = c.x;
        v.image.pixels[i * 3 + 1] = c.y;
        v.image.pixels[i * 3 + 2] = c.z;
    }
    return v;
}

TrainSample generate_sample(const DatasetConfig& cfg, int subject, int expression) {
    if (subject < 0 || expression < 0) throw std::invalid_argument("generate_sample: bad ids");
    TrainSample s;
    s.subject = subject;
    s.expression = expression;

    Rng subj_rng = Rng::fork(cfg.seed, {0x5d, uint64_t(subject)});
    s.subject_spec = draw_subject(subj_rng);
    s.subject_spec.texture_seed = Rng::fork(cfg.seed, {0x7e, uint64_t(subject)}).next_u64();

    if (expression != 0) {
        Rng expr_rng = Rng::fork(cfg.seed, {0xe1, uint64_t(subject), uint64_t(expression)});
        s.expression_spec = draw_expression(s.subject_spec, expr_rng);
    }
    s.shape = make_shape(s.subject_spec, s.expression_spec);

    s.marks = landmarks(s.shape);
    s.surface.reserve(size_t(cfg.surface_samples));
    for (const Landmark& m : s.marks)
        s.surface.push_back({m.p, surface_normal(s.shape, m.p), m.uv});
    Rng pt_rng = Rng::fork(cfg.seed, {0x5a, uint64_t(subject), uint64_t(expression)});
    while (int(s.surface.size()) < cfg.surface_samples) {
        float z = pt_rng.uniform(-1.f, 1.f);
        float az = pt_rng.uniform(0.f, float(2 * kPi));
        float sc = std::sqrt(std::max(0.f, 1.f - z * z));
        Vec3 dir{sc * std::cos(az), sc * std::sin(az), z};
        float r = radial(s.shape, dir);
        Vec3 p = dir * r;
        s.surface.push_back({p, surface_normal(s.shape, p), gt_uv(p)});
    }

    s.texture_params = draw_texture_params(s.subject_spec.texture_seed);
    s.texture = bake_texture(s.texture_params, cfg.texture_size);

    s.views.reserve(size_t(cfg.views));
    for (int k = 0; k < cfg.views; ++k)
        s.views.push_back(render_gt(s.shape, s.texture, dataset_camera(k, cfg.image_size)));
    return s;
}

Dataset make_dataset(const DatasetConfig& cfg) {
    if (cfg.subjects < 1 || cfg.expressions < 1 || cfg.views < 1)
        throw std::invalid_argument("make_dataset: counts must be positive");
    Dataset ds;
    ds.cfg = cfg;
    ds.samples.reserve(size_t(cfg.subjects) * size_t(cfg.expressions));
    for (int s = 0; s < cfg.subjects; ++s)
        for (int e = 0; e < cfg.expressions; ++e) ds.samples.push_back(generate_sample(cfg, s, e));
    return ds;
}

void write_sample(const std::string& dir, const TrainSample& sample) {
    fs::path root = fs::path(dir) / sample_dir_name(sample.subject, sample.expression);
    fs::create_directories(root);
    write_samples_bin((root / "samples.bin").string(), sample.surface);
    write_landmarks_txt((root / "landmarks.txt").string(), sample.marks);
    save_png((root / "texture.png").string(), sample.texture);
    {
        std::ofstream f(root / "spec.json");
        f << spec_to_json(sample).dump(1) << '\n';
    }
    for (size_t k = 0; k < sample.views.size(); ++k) {
        fs::path vdir = root / "views" / std::to_string(k);
        fs::create_directories(vdir);
        const View& v = sample.views[k];
        save_png((vdir / "image.png").string(), v.image);
        save_png((vdir / "mask.png").string(), v.mask);
        save_float_grid((vdir / "depth.bin").string(), v.depth);
        save_camera((vdir / "camera.txt").string(), v.camera);
    }
}

void write_dataset(const std::string& dir, const DatasetConfig& cfg) {
    if (cfg.subjects < 1 || cfg.expressions < 1 || cfg.views < 1)
        throw std::invalid_argument("write_dataset: counts must be positive");
    fs::create_directories(dir);
    json manifest;
    manifest["config"] = {{"subjects", cfg.subjects},     {"expressions", cfg.expressions},
                          {"views", cfg.views},           {"surface_samples", cfg.surface_samples},
                          {"image_size", cfg.image_size}, {"texture_size", cfg.texture_size},
                          {"seed", cfg.seed}};
    json list = json::array();
    for (int s = 0; s < cfg.subjects; ++s)
        for (int e = 0; e < cfg.expressions; ++e) {
            TrainSample sample = generate_sample(cfg, s, e);
            write_sample(dir, sample);
            list.push_back({{"subject", s}, {"expression", e},
                            {"dir", sample_dir_name(s, e)}});
        }
    manifest["samples"] = list;
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("dataset: cannot write manifest in " + dir);
    f << manifest.dump(1) << '\n';
}

DatasetConfig load_manifest(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("dataset: no manifest.json in " + dir);
    json manifest = json::parse(f);
    const json& c = manifest.at("config");
    DatasetConfig cfg;
    cfg.subjects = c.at("subjects").get<int>();
    cfg.expressions = c.at("expressions").get<int>();
    cfg.views = c.at("views").get<int>();
    cfg.surface_samples = c.at("surface_samples").get<int>();
    cfg.image_size = c.at("image_size").get<int>();
    cfg.texture_size = c.at("texture_size").get<int>();
    cfg.seed = c.at("seed").get<uint64_t>();
    return cfg;
}

TrainSample load_sample(const std::string& dir, int subject, int expression) {
    fs::path root = fs::path(dir) / sample_dir_name(subject, expression);
    if (!fs::exists(root)) throw std::runtime_error("dataset: no sample at " + root.string());
    TrainSample s;
    s.subject = subject;
    s.expression = expression;
    {
        std::ifstream f(root / "spec.json");
        if (!f) throw std::runtime_error("dataset: missing spec.json in " + root.string());
        spec_from_json(json::parse(f), &s);
    }
    s.surface = read_samples_bin((root / "samples.bin").string());
    s.marks = read_landmarks_txt((root / "landmarks.txt").string());
    s.texture = load_png((root / "texture.png").string());
    s.texture_params = draw_texture_params(s.subject_spec.texture_seed);
    for (size_t k = 0; fs::exists(root / "views" / std::to_string(k)); ++k) {
        fs::path vdir = root / "views" / std::to_string(k);
        View v;
        v.image = load_png((vdir / "image.png").string());
        v.mask = load_png((vdir / "mask.png").string());
        v.depth = load_float_grid((vdir / "depth.bin").string());
        v.camera = load_camera((vdir / "camera.txt").string());
        s.views.push_back(std::move(v));
    }
    return s;
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.cfg = load_manifest(dir);
    for (int s = 0; s < ds.cfg.subjects; ++s)
        for (int e = 0; e < ds.cfg.expressions; ++e)
            ds.samples.push_back(load_sample(dir, s, e));
    return ds;
}

std::vector<std::string> audit_sample(const TrainSample& sample) {
    std::vector<std::string> problems;
    auto complain = [&problems](const std::string& what) { problems.push_back(what); };

    for (size_t i = 0; i < sample.surface.size(); ++i) {
        const SurfaceSample& r = sample.surface[i];
        float fv = analytic_field(sample.shape, r.p);
        if (std::fabs(fv) >= 1e-4f)
            complain("surface sample " + std::to_string(i) + " off the level set: " +
                     std::to_string(fv));
        float nn = norm(r.n);
        if (std::fabs(nn - 1.f) > 1e-4f)
            complain("normal " + std::to_string(i) + " not unit: " + std::to_string(nn));
        Vec2 uv = gt_uv(r.p);
        if (std::fabs(uv.x - r.uv.x) > 1e-5f || std::fabs(uv.y - r.uv.y) > 1e-5f)
            complain("uv " + std::to_string(i) + " disagrees with the parameterization");
    }
    if (int(sample.marks.size()) != kNumLandmarks) complain("landmark count");
    for (size_t i = 0; i < sample.marks.size(); ++i) {
        const Landmark& m = sample.marks[i];
        if (m.id != int(i)) complain("landmark ids out of order");
        Vec2 a = kLandmarkAnchors[size_t(m.id)];
        if (std::fabs(m.uv.x - a.x) > 1e-6f || std::fabs(m.uv.y - a.y) > 1e-6f)
            complain("landmark " + std::to_string(i) + " anchor drift");
        Vec2 uv = gt_uv(m.p);
        if (std::fabs(uv.x - a.x) > 1e-5f || std::fabs(uv.y - a.y) > 1e-5f)
            complain("landmark " + std::to_string(i) + " point/anchor mismatch");
    }
    if (sample.expression == 0 && !sample.expression_spec.bumps.empty())
        complain("neutral expression carries deformation");
    for (size_t v = 0; v < sample.views.size(); ++v) {
        const View& view = sample.views[v];
        if (view.image.width != view.depth.width || view.image.width != view.mask.width)
            complain("view " + std::to_string(v) + " extent mismatch");
        for (size_t i = 0; i < view.mask.pixels.size(); ++i) {
            bool hit = view.mask.pixels[i] > 0.5f;
            if (hit && view.depth.pixels[i] <= 0.f) {
                complain("view " + std::to_string(v) + " hit pixel without depth");
                break;
            }
        }
    }
    return problems;
}

}  // namespace morphsdf
